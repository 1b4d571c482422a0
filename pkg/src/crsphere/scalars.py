"""Exact Gaussian rationals.

``GaussQ`` is the exact scalar: a pair of flint rationals ``re + i*im``.
Float scalars are plain Python/numpy complex numbers, so the two
realizations share the usual arithmetic operators plus ``conjugate``,
``abs2`` and a zero test (:func:`is_zero`).
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Integral

import flint
import numpy as np

from . import config

fmpq = flint.fmpq

_RATIONAL_TYPES = (int, np.integer, Fraction, flint.fmpq, flint.fmpz)


def to_fmpq(x) -> flint.fmpq:
    """Convert an exact rational-like value to ``flint.fmpq``."""
    if isinstance(x, flint.fmpq):
        return x
    if isinstance(x, (Integral, np.integer, flint.fmpz)):
        return fmpq(int(x))
    if isinstance(x, Fraction):
        return fmpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return parse_rational(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


def parse_rational(text: str) -> flint.fmpq:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return fmpq(int(num), int(den))
    if "." in text or "e" in text.lower():
        f = Fraction(text)
        return fmpq(f.numerator, f.denominator)
    return fmpq(int(text))


def format_rational(x: flint.fmpq) -> str:
    """Serialize as "num/den" (or "num" for integers)."""
    p, q = int(x.p), int(x.q)
    return str(p) if q == 1 else f"{p}/{q}"


class GaussQ:
    """Exact complex rational ``re + i*im``."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = to_fmpq(re)
        self.im = to_fmpq(im)

    @classmethod
    def _raw(cls, re, im):
        obj = object.__new__(cls)
        obj.re = re
        obj.im = im
        return obj

    @staticmethod
    def coerce(x) -> "GaussQ":
        if isinstance(x, GaussQ):
            return x
        if isinstance(x, _RATIONAL_TYPES):
            return GaussQ._raw(to_fmpq(x), _ZERO_Q)
        raise TypeError(f"cannot use {type(x).__name__} as an exact scalar")

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, GaussQ):
            return GaussQ._raw(self.re + other.re, self.im + other.im)
        if isinstance(other, _RATIONAL_TYPES):
            return GaussQ._raw(self.re + to_fmpq(other), self.im)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return GaussQ._raw(-self.re, -self.im)

    def __pos__(self):
        return self

    def __sub__(self, other):
        if isinstance(other, GaussQ):
            return GaussQ._raw(self.re - other.re, self.im - other.im)
        if isinstance(other, _RATIONAL_TYPES):
            return GaussQ._raw(self.re - to_fmpq(other), self.im)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, _RATIONAL_TYPES):
            return GaussQ._raw(to_fmpq(other) - self.re, -self.im)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, GaussQ):
            a, b, c, d = self.re, self.im, other.re, other.im
            return GaussQ._raw(a * c - b * d, a * d + b * c)
        if isinstance(other, _RATIONAL_TYPES):
            r = to_fmpq(other)
            return GaussQ._raw(self.re * r, self.im * r)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, _RATIONAL_TYPES):
            r = to_fmpq(other)
            return GaussQ._raw(self.re / r, self.im / r)
        if isinstance(other, GaussQ):
            den = other.re * other.re + other.im * other.im
            if den == 0:
                raise ZeroDivisionError("GaussQ division by zero")
            num = self * other.conjugate()
            return GaussQ._raw(num.re / den, num.im / den)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, _RATIONAL_TYPES):
            return GaussQ.coerce(other) / self
        return NotImplemented

    def __pow__(self, n: int):
        if not isinstance(n, Integral):
            return NotImplemented
        if n < 0:
            return GaussQ(1) / (self ** (-n))
        result, base = GaussQ._raw(_ONE_Q, _ZERO_Q), self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # structure ------------------------------------------------------------
    def conjugate(self):
        return GaussQ._raw(self.re, -self.im)

    def abs2(self) -> flint.fmpq:
        return self.re * self.re + self.im * self.im

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def __bool__(self):
        return not self.is_zero()

    def __eq__(self, other):
        if isinstance(other, GaussQ):
            return self.re == other.re and self.im == other.im
        if isinstance(other, _RATIONAL_TYPES):
            return self.im == 0 and self.re == to_fmpq(other)
        return NotImplemented

    def __hash__(self):
        if self.im == 0:
            return hash(self.re)
        return hash((self.re, self.im))

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    @property
    def real(self):
        return self.re

    @property
    def imag(self):
        return self.im

    def __repr__(self):
        if self.im == 0:
            return f"GaussQ({format_rational(self.re)})"
        return f"GaussQ({format_rational(self.re)}, {format_rational(self.im)})"

    # serialization --------------------------------------------------------
    def to_strings(self) -> tuple[str, str]:
        return format_rational(self.re), format_rational(self.im)


_ZERO_Q = fmpq(0)
_ONE_Q = fmpq(1)
ZERO = GaussQ._raw(_ZERO_Q, _ZERO_Q)
ONE = GaussQ._raw(_ONE_Q, _ZERO_Q)
I = GaussQ._raw(_ZERO_Q, _ONE_Q)


def is_zero(x, tol: float | None = None) -> bool:
    """Zero test: literal for exact scalars, ``|x| <= tol`` for floats."""
    if isinstance(x, GaussQ):
        return x.is_zero()
    if isinstance(x, _RATIONAL_TYPES):
        return x == 0
    if tol is None:
        tol = config.get().zero
    return abs(x) <= tol


def conjugate(x):
    return x.conjugate()


def abs2(x):
    if isinstance(x, GaussQ):
        return x.abs2()
    return abs(x) ** 2


def is_exact(x) -> bool:
    return isinstance(x, (GaussQ,) + _RATIONAL_TYPES)
