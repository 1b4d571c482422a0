"""Bigraded spherical harmonics on the unit sphere S^3 in C^2.

The space H_{p,q} of harmonic polynomials of bidegree (p, q) in (z, w) and
their conjugates is spanned by the canonical basis

    e_{p,q,a} = (Z1)^q (z^a w^{p+q-a}),   a = 0..p+q,

with Z1 = conj(w) d/dz - conj(z) d/dw.  Each e_{p,q,a} has torus weight
(m1, m2) = (a - q, p - a) and on the sphere takes the "sector" form

    e_{p,q,a} = z^(m1) w^(m2) g(x),   x = |z|^2,

where z^(m) means z^m for m >= 0 and conj(z)^(-m) otherwise, and g is a
polynomial of degree n = q - max(0, -m1) - max(0, -m2).  Within one sector
the g's are Jacobi polynomials P_n^(|m1|,|m2|)(1 - 2x) up to scale, so

  * distinct basis vectors are L^2-orthogonal (Gram matrices are diagonal),
  * products reduce to products of univariate polynomials in x,
  * grid transforms factor into FFTs in the two Hopf angles and a small
    Gauss-Legendre quadrature in x.

Exact arithmetic uses flint rational polynomials; float arithmetic uses
packed numpy vectors (:class:`PackedSpace`).  The sphere measure is
normalized to total mass 1, so x is uniformly distributed on [0, 1].
"""

from __future__ import annotations

import functools
import math
from numbers import Integral
from typing import Iterable

import flint
import numpy as np
from scipy import sparse
from scipy.special import eval_jacobi, roots_legendre

from . import config
from .errors import GridTooCoarse, TruncationLoss
from .scalars import ONE, ZERO, GaussQ, format_rational, is_exact, parse_rational

fmpq = flint.fmpq
fmpq_poly = flint.fmpq_poly

_X = fmpq_poly([0, 1])
_ONE_MINUS_X = fmpq_poly([1, -1])


# ---------------------------------------------------------------------------
# Polynomials in z, conj(z), w, conj(w)
# ---------------------------------------------------------------------------

class Polynomial:
    """Polynomial in (z, zb, w, wb) with exact or float coefficients.

    Terms are stored as ``{(a, b, c, d): coeff}`` for z^a zb^b w^c wb^d.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for k, v in terms.items():
                if is_exact(v):
                    v = GaussQ.coerce(v)
                    if v.is_zero():
                        continue
                elif v == 0:
                    continue
                clean[tuple(k)] = v
        self.terms = clean

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, c):
        return cls({(0, 0, 0, 0): c})

    @classmethod
    def z(cls):
        return cls({(1, 0, 0, 0): ONE})

    @classmethod
    def zb(cls):
        return cls({(0, 1, 0, 0): ONE})

    @classmethod
    def w(cls):
        return cls({(0, 0, 1, 0): ONE})

    @classmethod
    def wb(cls):
        return cls({(0, 0, 0, 1): ONE})

    @classmethod
    def monomial(cls, a, b, c, d, coeff=ONE):
        return cls({(a, b, c, d): coeff})

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _as_poly(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            if k in out:
                a, b = _common(out[k], v)
                out[k] = a + b
            else:
                out[k] = v
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            if is_exact(other):
                other = GaussQ.coerce(other)
            return Polynomial({k: _mul(v, other) for k, v in self.terms.items()})
        out = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = (k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2], k1[3] + k2[3])
                prod = _mul(v1, v2)
                out[k] = _add(out[k], prod) if k in out else prod
        return Polynomial(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Polynomial.constant(ONE)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            other = _as_poly(other)
        return (self - other).terms == {}

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def conj(self):
        return Polynomial({(b, a, d, c): v.conjugate() for (a, b, c, d), v in self.terms.items()})

    # calculus -------------------------------------------------------------
    def _diff(self, slot):
        out = {}
        for k, v in self.terms.items():
            e = k[slot]
            if e == 0:
                continue
            nk = list(k)
            nk[slot] = e - 1
            out[tuple(nk)] = v * e
        return Polynomial(out)

    def d_z(self):
        return self._diff(0)

    def d_zb(self):
        return self._diff(1)

    def d_w(self):
        return self._diff(2)

    def d_wb(self):
        return self._diff(3)

    def Z1(self):
        """Z1 = conj(w) d/dz - conj(z) d/dw."""
        return Polynomial.wb() * self.d_z() - Polynomial.zb() * self.d_w()

    def Z1bar(self):
        """conj(Z1) = w d/dzb - z d/dwb."""
        return Polynomial.w() * self.d_zb() - Polynomial.z() * self.d_wb()

    def T(self):
        """T = i(z d/dz + w d/dw - zb d/dzb - wb d/dwb)."""
        out = {}
        for (a, b, c, d), v in self.terms.items():
            k = a + c - b - d
            if k:
                out[(a, b, c, d)] = v * (GaussQ(0, k) if is_exact(v) else 1j * k)
        return Polynomial(out)

    def laplacian(self):
        """Ambient Laplacian 4(d_z d_zb + d_w d_wb)."""
        return (self.d_z().d_zb() + self.d_w().d_wb()) * 4

    # structure ------------------------------------------------------------
    def is_zero(self):
        return not self.terms

    def bidegrees(self):
        return {(a + c, b + d) for (a, b, c, d) in self.terms}

    def is_bihomogeneous(self):
        return len(self.bidegrees()) <= 1

    def degree(self):
        return max((sum(k) for k in self.terms), default=-1)

    def evaluate(self, z, w):
        zb, wb = z.conjugate(), w.conjugate()
        total = 0
        for (a, b, c, d), v in self.terms.items():
            if isinstance(v, GaussQ) and not isinstance(z, GaussQ):
                v = complex(v)
            total = total + v * (z ** a) * (zb ** b) * (w ** c) * (wb ** d)
        return total

    def to_sectors(self) -> dict:
        """Restriction to S^3 in sector form {(m1, m2): (re_poly, im_poly)}."""
        sectors: dict = {}
        for (a, b, c, d), v in self.terms.items():
            v = GaussQ.coerce(v)
            g = _X ** min(a, b) * _ONE_MINUS_X ** min(c, d)
            _sector_add(sectors, (a - b, c - d), v.re * g, v.im * g)
        return sectors

    def __repr__(self):
        if not self.terms:
            return "Polynomial(0)"
        return "Polynomial(" + " + ".join(
            f"{v!r}*{_mono_str(k)}" for k, v in sorted(self.terms.items())) + ")"


def _common(a, b):
    """Bring two coefficients to a common scalar type (complex if either is float)."""
    if is_exact(a) and not is_exact(b):
        return complex(GaussQ.coerce(a)), b
    if is_exact(b) and not is_exact(a):
        return a, complex(GaussQ.coerce(b))
    return a, b


def _mul(a, b):
    a, b = _common(a, b)
    return a * b


def _add(a, b):
    a, b = _common(a, b)
    return a + b


def _mono_str(k):
    names = ("z", "conj(z)", "w", "conj(w)")
    parts = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, k) if e]
    return "*".join(parts) or "1"


def _as_poly(x):
    return x if isinstance(x, Polynomial) else Polynomial.constant(x)


# ---------------------------------------------------------------------------
# Canonical basis and sector data
# ---------------------------------------------------------------------------

def _check_pq(p, q):
    if not (isinstance(p, Integral) and isinstance(q, Integral)) or p < 0 or q < 0:
        raise ValueError(f"block indices must be non-negative integers, got ({p}, {q})")


@functools.lru_cache(maxsize=None)
def _basis_cached(p, q):
    out = []
    for a in range(p + q + 1):
        poly = Polynomial.monomial(a, 0, p + q - a, 0)
        for _ in range(q):
            poly = poly.Z1()
        out.append(poly)
    return tuple(out)


def basis(p: int, q: int) -> list:
    """Canonical basis [e_{p,q,0}, ..., e_{p,q,p+q}] as integer polynomials."""
    _check_pq(p, q)
    return list(_basis_cached(p, q))


def sector_of(p, q, a):
    """Torus weight (m1, m2) and Jacobi degree n of e_{p,q,a}."""
    m1, m2 = a - q, p - a
    return m1, m2, q - max(0, -m1) - max(0, -m2)


def block_of(m1, m2, n):
    """Inverse of :func:`sector_of`: the (p, q, a) with that sector and degree."""
    q = max(0, -m1) + max(0, -m2) + n
    return m1 + m2 + q, q, m1 + q


def _sector_Z1(m1, m2, g):
    """Z1 on z^(m1) w^(m2) g(x); the result lives in sector (m1-1, m2-1)."""
    xa = _X if m1 > 0 else 1
    xb = _ONE_MINUS_X if m2 > 0 else 1
    out = xa * xb * g.derivative()
    if m1 > 0:
        out += m1 * xb * g
    if m2 > 0:
        out -= m2 * xa * g
    return out


@functools.lru_cache(maxsize=None)
def sector_poly(p, q, a) -> flint.fmpq_poly:
    """The polynomial g with e_{p,q,a} = z^(m1) w^(m2) g(|z|^2) on S^3."""
    if q == 0:
        return fmpq_poly([1])
    prev = sector_poly(p + 1, q - 1, a)
    m1, m2, _ = sector_of(p + 1, q - 1, a)
    return _sector_Z1(m1, m2, prev)


def _beta(a, c):
    """Integral of x^a (1-x)^c over [0, 1]."""
    return fmpq(math.factorial(a) * math.factorial(c), math.factorial(a + c + 1))


@functools.lru_cache(maxsize=None)
def basis_norm2(p, q, a) -> flint.fmpq:
    """Exact ||e_{p,q,a}||^2 for the normalized sphere measure."""
    m1, m2, _ = sector_of(p, q, a)
    g2 = sector_poly(p, q, a) ** 2
    al, be = abs(m1), abs(m2)
    coeffs = g2.coeffs()
    total = fmpq(0)
    for k, c in enumerate(coeffs):
        if c != 0:
            total += c * _beta(al + k, be)
    return total


@functools.lru_cache(maxsize=None)
def gram_matrix(p, q):
    """Exact Gram matrix of the canonical basis of H_{p,q} (diagonal)."""
    n = p + q + 1
    G = flint.fmpq_mat(n, n)
    for a in range(n):
        G[a, a] = basis_norm2(p, q, a)
    return G


@functools.lru_cache(maxsize=None)
def conj_ratio(p, q, a) -> flint.fmpq:
    """r with conj(e_{p,q,a}) = r * e_{q,p,p+q-a}."""
    num = sector_poly(p, q, a)[0]
    den = sector_poly(q, p, p + q - a)[0]
    return num / den


@functools.lru_cache(maxsize=None)
def jacobi_scale(p, q, a) -> float:
    """kappa with g_{p,q,a}(x) = kappa * P_n^(|m1|,|m2|)(1 - 2x)."""
    m1, m2, n = sector_of(p, q, a)
    return float(sector_poly(p, q, a)[0] / math.comb(n + abs(m1), n))


def dim_block(p, q):
    return p + q + 1


# ---------------------------------------------------------------------------
# Sector algebra (exact)
# ---------------------------------------------------------------------------

def _sector_add(sectors, key, re, im):
    cur = sectors.get(key)
    if cur is None:
        sectors[key] = [fmpq_poly(re), fmpq_poly(im)]
    else:
        cur[0] += re
        cur[1] += im


def _blocks_to_sectors(u) -> dict:
    sectors: dict = {}
    for (p, q), coeffs in u.blocks.items():
        for a, c in enumerate(coeffs):
            if c.is_zero():
                continue
            m1, m2, _ = sector_of(p, q, a)
            g = sector_poly(p, q, a)
            _sector_add(sectors, (m1, m2), c.re * g if c.re != 0 else fmpq_poly(),
                        c.im * g if c.im != 0 else fmpq_poly())
    return sectors


def _sectors_to_blocks(sectors, truncation):
    """Triangular solve of each sector polynomial against its g_n basis.

    Returns (blocks, lost) where ``lost`` is True when a nonzero component
    with p + q > truncation was dropped.
    """
    blocks: dict = {}
    lost = False
    for (m1, m2), (re, im) in sectors.items():
        re, im = fmpq_poly(re), fmpq_poly(im)
        deg = max(re.degree(), im.degree())
        for n in range(deg, -1, -1):
            cr, ci = re[n], im[n]
            if cr == 0 and ci == 0:
                continue
            p, q, a = block_of(m1, m2, n)
            g = sector_poly(p, q, a)
            lead = g[n]
            cr, ci = cr / lead, ci / lead
            if cr != 0:
                re -= cr * g
            if ci != 0:
                im -= ci * g
            if truncation is not None and p + q > truncation:
                lost = True
                continue
            blk = blocks.get((p, q))
            if blk is None:
                blk = blocks[(p, q)] = [ZERO] * (p + q + 1)
            blk[a] = GaussQ._raw(cr, ci)
    return {k: tuple(v) for k, v in blocks.items()}, lost


_POW_CACHE: dict = {}


def _reduction(i, l):
    key = (i, l)
    r = _POW_CACHE.get(key)
    if r is None:
        r = _POW_CACHE[key] = _X ** i * _ONE_MINUS_X ** l
    return r


def _sector_multiply(su, sv) -> dict:
    acc: dict = {}
    for (m1, m2), (r1, i1) in su.items():
        z1 = i1 == 0
        rz1 = r1 == 0
        for (n1, n2), (r2, i2) in sv.items():
            k1, k2 = m1 + n1, m2 + n2
            key = (k1, k2, (abs(m1) + abs(n1) - abs(k1)) // 2,
                   (abs(m2) + abs(n2) - abs(k2)) // 2)
            z2 = i2 == 0
            if z1 and z2:
                re, im = r1 * r2, None
            elif z1:
                re, im = r1 * r2, r1 * i2
            elif z2:
                re, im = r1 * r2, i1 * r2
            elif rz1 and r2 == 0:
                re, im = -(i1 * i2), None
            else:
                A = r1 * r2
                B = i1 * i2
                C = (r1 + i1) * (r2 + i2)
                re, im = A - B, C - A - B
            cur = acc.get(key)
            if cur is None:
                acc[key] = [re, im if im is not None else fmpq_poly()]
            else:
                cur[0] += re
                if im is not None:
                    cur[1] += im
    out: dict = {}
    for (k1, k2, i, l), (re, im) in acc.items():
        if i or l:
            red = _reduction(i, l)
            re, im = re * red, im * red
        _sector_add(out, (k1, k2), re, im)
    return out


# ---------------------------------------------------------------------------
# SphereFunction
# ---------------------------------------------------------------------------

def _max_trunc(a, b):
    if a is None or b is None:
        return None
    return max(a, b)


class SphereFunction:
    """Finite bigraded harmonic expansion with a tensor weight.

    ``blocks`` maps (p, q) to the coordinates of the block in the canonical
    basis: a tuple of :class:`GaussQ` (exact mode) or a complex numpy array
    (float mode).  ``truncation`` is the maximal total degree p + q kept,
    or None for no truncation.  ``truncated`` records that some operation
    producing this value dropped nonzero blocks.
    """

    __slots__ = ("weight", "truncation", "blocks", "exact", "truncated")

    def __init__(self, blocks=None, weight=0, truncation=None, exact=True, truncated=False):
        self.weight = int(weight)
        self.truncation = truncation
        self.exact = exact
        self.truncated = truncated
        clean = {}
        for (p, q), coeffs in (blocks or {}).items():
            _check_pq(p, q)
            if truncation is not None and p + q > truncation:
                raise ValueError(f"block ({p},{q}) exceeds truncation {truncation}")
            if len(coeffs) != p + q + 1:
                raise ValueError(f"block ({p},{q}) needs {p + q + 1} coefficients, got {len(coeffs)}")
            if exact:
                coeffs = tuple(GaussQ.coerce(c) for c in coeffs)
                if all(c.is_zero() for c in coeffs):
                    continue
            else:
                coeffs = np.asarray(coeffs, dtype=complex)
                coeffs.setflags(write=False)
            clean[(int(p), int(q))] = coeffs
        self.blocks = clean

    # constructors ---------------------------------------------------------
    @classmethod
    def zero(cls, weight=0, truncation=None, exact=True):
        return cls({}, weight, truncation, exact)

    @classmethod
    def constant(cls, c, weight=0, truncation=None, exact=None):
        if exact is None:
            exact = is_exact(c)
        return cls({(0, 0): [c]}, weight, truncation, exact)

    @classmethod
    def basis_element(cls, p, q, a, coeff=ONE, weight=0, truncation=None, exact=True):
        coeffs = [ZERO if exact else 0] * (p + q + 1)
        coeffs[a] = coeff
        return cls({(p, q): coeffs}, weight, truncation, exact)

    @classmethod
    def from_polynomial(cls, P: Polynomial, weight=0, truncation=None):
        return harmonic_decompose(P, weight=weight, truncation=truncation)

    def _new(self, blocks, weight=None, truncation="same", truncated=None, exact=None):
        out = object.__new__(SphereFunction)
        out.weight = self.weight if weight is None else weight
        out.truncation = self.truncation if truncation == "same" else truncation
        out.exact = self.exact if exact is None else exact
        out.truncated = self.truncated if truncated is None else truncated
        out.blocks = blocks
        return out

    # basic structure ------------------------------------------------------
    def block(self, p, q):
        c = self.blocks.get((p, q))
        if c is None:
            return tuple([ZERO] * (p + q + 1)) if self.exact else np.zeros(p + q + 1, complex)
        return c

    def support(self, tol=None):
        return sorted(k for k in self.blocks if not _block_is_zero(self.blocks[k], tol))

    def degree(self):
        return max((p + q for (p, q) in self.support()), default=-1)

    def is_zero(self, tol=None):
        return not self.support(tol)

    def with_weight(self, weight):
        return self._new(self.blocks, weight=weight)

    def with_truncation(self, truncation):
        """Drop blocks above ``truncation`` and record whether any was nonzero."""
        lost = False
        blocks = {}
        for (p, q), c in self.blocks.items():
            if truncation is not None and p + q > truncation:
                lost = lost or not _block_is_zero(c)
                continue
            blocks[(p, q)] = c
        return self._new(blocks, truncation=truncation, truncated=self.truncated or lost)

    def to_float(self):
        if not self.exact:
            return self
        blocks = {}
        for k, c in self.blocks.items():
            arr = np.array([complex(x) for x in c])
            arr.setflags(write=False)
            blocks[k] = arr
        return self._new(blocks, exact=False)

    def map_blocks(self, fn, weight=None):
        """Apply ``fn(p, q, coeffs) -> ((p', q'), coeffs')`` block by block."""
        out: dict = {}
        for (p, q), c in self.blocks.items():
            res = fn(p, q, c)
            if res is None:
                continue
            key, nc = res
            if self.truncation is not None and key[0] + key[1] > self.truncation:
                raise ValueError(f"block {key} exceeds truncation")
            if key in out:
                out[key] = _block_add(out[key], nc, self.exact)
            else:
                out[key] = nc
        return self._new(_prune(out, self.exact), weight=weight)

    # arithmetic -----------------------------------------------------------
    def _check_compat(self, other):
        if not isinstance(other, SphereFunction):
            raise TypeError("expected SphereFunction")
        if self.exact != other.exact:
            raise TypeError("cannot mix exact and float SphereFunctions")
        if self.weight != other.weight:
            raise ValueError(f"weight mismatch: {self.weight} vs {other.weight}")

    def __add__(self, other):
        if other == 0 and not isinstance(other, SphereFunction):
            return self
        self._check_compat(other)
        blocks = dict(self.blocks)
        for k, c in other.blocks.items():
            blocks[k] = _block_add(blocks[k], c, self.exact) if k in blocks else c
        return self._new(_prune(blocks, self.exact),
                         truncation=_max_trunc(self.truncation, other.truncation),
                         truncated=self.truncated or other.truncated)

    def __radd__(self, other):
        if other == 0:
            return self
        return NotImplemented

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        if self.exact:
            c = GaussQ.coerce(c)
            if c.is_zero():
                return self._new({})
            blocks = {k: tuple(x * c for x in v) for k, v in self.blocks.items()}
        else:
            c = complex(c)
            blocks = {k: _frozen(v * c) for k, v in self.blocks.items()}
        return self._new(blocks)

    def __mul__(self, c):
        if isinstance(c, SphereFunction):
            return multiply(self, c, _max_trunc(self.truncation, c.truncation))
        return self.scale(c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if self.exact:
            return self.scale(GaussQ(1) / GaussQ.coerce(c))
        return self.scale(1 / complex(c))

    def conj(self):
        """Pointwise complex conjugate: maps block (p, q) to block (q, p)."""
        out = {}
        for (p, q), c in self.blocks.items():
            d = p + q
            if self.exact:
                nc = [ZERO] * (d + 1)
                for a, x in enumerate(c):
                    if not x.is_zero():
                        nc[d - a] = x.conjugate() * conj_ratio(p, q, a)
                out[(q, p)] = tuple(nc)
            else:
                r = _conj_ratio_float(p, q)
                out[(q, p)] = _frozen((np.conj(c) * r)[::-1])
        return self._new(out)

    def real_part(self):
        return (self + self.conj()) / 2

    def imag_part(self):
        if self.exact:
            return (self - self.conj()) * GaussQ(0, fmpq(-1, 2))
        return (self - self.conj()) * (-0.5j)

    # comparison -----------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, SphereFunction):
            if other == 0:
                return self.is_zero()
            return NotImplemented
        if self.weight != other.weight or self.exact != other.exact:
            return False
        return (self - other).is_zero(tol=0.0 if not self.exact else None)

    __hash__ = None

    def allclose(self, other, tol=None):
        if tol is None:
            tol = config.get().zero
        return self.distance(other) <= tol

    def distance(self, other):
        """L^2 distance (float)."""
        a = self.to_float()
        b = other.to_float().with_weight(a.weight)
        return math.sqrt(max(norm2(a - b), 0.0))

    def norm(self):
        return math.sqrt(float(norm2(self)))

    # serialization --------------------------------------------------------
    def to_json(self) -> dict:
        blocks = []
        for (p, q) in sorted(self.blocks):
            c = self.blocks[(p, q)]
            if self.exact:
                re = [format_rational(x.re) for x in c]
                im = [format_rational(x.im) for x in c]
            else:
                re = [float(x.real) for x in c]
                im = [float(x.imag) for x in c]
            blocks.append({"p": p, "q": q, "re": re, "im": im})
        return {"weight": self.weight, "truncation": self.truncation, "blocks": blocks}

    @classmethod
    def from_json(cls, data: dict) -> "SphereFunction":
        blocks = {}
        exact = None
        for b in data.get("blocks", []):
            re, im = b["re"], b["im"]
            is_str = all(isinstance(x, str) for x in list(re) + list(im))
            if exact is None:
                exact = is_str
            elif exact != is_str:
                raise ValueError("mixed exact and float scalars in JSON")
            if exact:
                coeffs = [GaussQ(parse_rational(r), parse_rational(i)) for r, i in zip(re, im)]
            else:
                coeffs = [complex(float(r), float(i)) for r, i in zip(re, im)]
            blocks[(int(b["p"]), int(b["q"]))] = coeffs
        return cls(blocks, int(data.get("weight", 0)), data.get("truncation"),
                   exact=True if exact is None else exact)

    def to_polynomial(self) -> Polynomial:
        """Sum of canonical basis polynomials representing this function on S^3."""
        out = Polynomial()
        for (p, q), c in self.blocks.items():
            for a, x in enumerate(c):
                if not _scalar_is_zero(x, 0.0):
                    out = out + basis(p, q)[a] * x
        return out

    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return (f"SphereFunction(weight={self.weight}, truncation={self.truncation}, "
                f"{mode}, blocks={self.support()})")


def _frozen(arr):
    arr = np.asarray(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


def _scalar_is_zero(x, tol=None):
    if isinstance(x, GaussQ):
        return x.is_zero()
    if tol is None:
        tol = config.get().zero
    return abs(x) <= tol


def _block_is_zero(c, tol=None):
    if isinstance(c, tuple):
        return all(x.is_zero() for x in c)
    if tol is None:
        return not np.any(c)
    return bool(np.all(np.abs(c) <= tol))


def _block_add(a, b, exact):
    if exact:
        return tuple(x + y for x, y in zip(a, b))
    return _frozen(a + b)


def _prune(blocks, exact):
    if exact:
        return {k: v for k, v in blocks.items() if not all(x.is_zero() for x in v)}
    return {k: v for k, v in blocks.items() if np.any(v)}


@functools.lru_cache(maxsize=None)
def _conj_ratio_float(p, q):
    return np.array([float(conj_ratio(p, q, a)) for a in range(p + q + 1)])


# ---------------------------------------------------------------------------
# Decomposition, products, inner products
# ---------------------------------------------------------------------------

def harmonic_decompose(P: Polynomial, weight=0, truncation=None) -> SphereFunction:
    """Bigraded harmonic decomposition of the restriction of P to S^3.

    Exact for exact coefficients.  Float coefficients are decomposed exactly
    after rational conversion of each coefficient.
    """
    if any(not is_exact(v) for v in P.terms.values()):
        from fractions import Fraction
        P = Polynomial({k: GaussQ(Fraction(complex(v).real), Fraction(complex(v).imag))
                        for k, v in P.terms.items()})
        return harmonic_decompose(P, weight, truncation).to_float()
    blocks, lost = _sectors_to_blocks(P.to_sectors(), truncation)
    out = SphereFunction(blocks, weight, truncation, exact=True)
    out.truncated = lost
    return out


def multiply(u: SphereFunction, v: SphereFunction, N=None, strict=False) -> SphereFunction:
    """Pointwise product projected to blocks with p + q <= N.

    The result carries ``truncated = True`` when nonzero blocks were dropped;
    with ``strict=True`` a :class:`TruncationLoss` is raised instead.
    """
    if u.exact != v.exact:
        raise TypeError("cannot mix exact and float SphereFunctions")
    weight = u.weight + v.weight
    if u.exact:
        if not u.blocks or not v.blocks:
            out = SphereFunction.zero(weight, N, True)
        else:
            blocks, lost = _sectors_to_blocks(
                _sector_multiply(_blocks_to_sectors(u), _blocks_to_sectors(v)), N)
            out = SphereFunction(blocks, weight, N, exact=True)
            out.truncated = lost
    else:
        out = _float_multiply(u, v, N)
        out = out.with_weight(weight)
    out.truncated = out.truncated or u.truncated or v.truncated
    if strict and out.truncated:
        raise TruncationLoss("product dropped nonzero blocks above the truncation")
    return out


def _float_multiply(u, v, N):
    if not u.blocks or not v.blocks:
        return SphereFunction.zero(0, N, exact=False)
    full = max(u.degree(), 0) + max(v.degree(), 0)
    grid = QuadratureGrid.for_degree(2 * full)
    space = PackedSpace(full)
    vals = evaluate_grid(u, grid) * evaluate_grid(v, grid)
    vec = space.from_grid(vals, grid)
    lost = False
    if N is not None and N < full:
        high = np.abs(vec[space.degree > N])
        scale = max(1.0, float(np.abs(vec).max()))
        lost = bool(np.any(high > config.get().zero * scale))
        vec = np.where(space.degree > N, 0, vec)
    out = space.to_function(vec, truncation=full).with_truncation(N)
    out.truncated = lost
    return out


def inner_product(u: SphereFunction, v: SphereFunction):
    """Integral of u * conj(v) over S^3 with total measure 1."""
    if u.exact != v.exact:
        raise TypeError("cannot mix exact and float SphereFunctions")
    if u.exact:
        total = ZERO
        for k, cu in u.blocks.items():
            cv = v.blocks.get(k)
            if cv is None:
                continue
            p, q = k
            for a in range(p + q + 1):
                x, y = cu[a], cv[a]
                if x.is_zero() or y.is_zero():
                    continue
                total = total + x * y.conjugate() * basis_norm2(p, q, a)
        return total
    total = 0j
    for k, cu in u.blocks.items():
        cv = v.blocks.get(k)
        if cv is not None:
            total += complex(np.sum(cu * np.conj(cv) * _norm2_float(*k)))
    return total


def norm2(u: SphereFunction):
    """Squared L^2 norm; exact rational in exact mode."""
    if u.exact:
        return inner_product(u, u).re
    total = 0.0
    for k, c in u.blocks.items():
        total += float(np.sum(np.abs(c) ** 2 * _norm2_float(*k)))
    return total


def block_norm2(u: SphereFunction, p, q):
    c = u.blocks.get((p, q))
    if c is None:
        return fmpq(0) if u.exact else 0.0
    if u.exact:
        return sum((x.abs2() * basis_norm2(p, q, a) for a, x in enumerate(c)), fmpq(0))
    return float(np.sum(np.abs(c) ** 2 * _norm2_float(p, q)))


@functools.lru_cache(maxsize=None)
def _norm2_float(p, q):
    return np.array([float(basis_norm2(p, q, a)) for a in range(p + q + 1)])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def hopf_point(alpha, beta, s):
    return complex(np.exp(1j * alpha) * np.cos(s)), complex(np.exp(1j * beta) * np.sin(s))


def _zpow(z, m):
    return z ** m if m >= 0 else z.conjugate() ** (-m)


def evaluate_zw(u: SphereFunction, z, w):
    """Value of u at the sphere point (z, w).

    Exact mode accepts Gaussian-rational z, w (with |z|^2 + |w|^2 = 1) and
    returns a :class:`GaussQ`; float mode returns a complex number.
    """
    if u.exact and is_exact(z) and is_exact(w):
        z, w = GaussQ.coerce(z), GaussQ.coerce(w)
        x = z.abs2()
        total = ZERO
        for (p, q), c in u.blocks.items():
            for a, coeff in enumerate(c):
                if coeff.is_zero():
                    continue
                m1, m2, _ = sector_of(p, q, a)
                gx = sector_poly(p, q, a)(x)
                total = total + coeff * _zpow(z, m1) * _zpow(w, m2) * gx
        return total
    z, w = complex(z), complex(w)
    x = abs(z) ** 2
    total = 0j
    for (p, q), c in u.blocks.items():
        for a, coeff in enumerate(c):
            coeff = complex(coeff)
            if coeff == 0:
                continue
            m1, m2, n = sector_of(p, q, a)
            gx = jacobi_scale(p, q, a) * eval_jacobi(n, abs(m1), abs(m2), 1 - 2 * x)
            total += coeff * _zpow(z, m1) * _zpow(w, m2) * gx
    return total


def evaluate(u: SphereFunction, point):
    """Value of u at the Hopf-coordinate point (alpha, beta, s)."""
    return evaluate_zw(u, *hopf_point(*point))


# ---------------------------------------------------------------------------
# Quadrature grid and packed float space
# ---------------------------------------------------------------------------

class QuadratureGrid:
    """Product grid in Hopf coordinates z = e^{i alpha} cos s, w = e^{i beta} sin s.

    Uniform in alpha and beta with D + 1 points each, Gauss-Legendre in
    x = cos^2 s with D // 4 + 1 points.  Integrates polynomials in
    (z, zb, w, wb) of total degree <= D exactly against the normalized
    measure.  Grid values are arrays of shape (n_alpha, n_beta, n_x).
    """

    def __init__(self, exact_degree: int):
        if exact_degree < 0:
            raise ValueError("exact_degree must be non-negative")
        self.exact_degree = D = int(exact_degree)
        self.n_alpha = self.n_beta = D + 1
        self.n_x = D // 4 + 1
        t, wt = roots_legendre(self.n_x)
        self.x = (t + 1) / 2
        self.wx = wt / 2
        self.alpha = 2 * np.pi * np.arange(self.n_alpha) / self.n_alpha
        self.beta = 2 * np.pi * np.arange(self.n_beta) / self.n_beta
        self.s = np.arccos(np.sqrt(self.x))
        self.shape = (self.n_alpha, self.n_beta, self.n_x)
        A, B, X = np.meshgrid(self.alpha, self.beta, self.x, indexing="ij")
        self.z = np.exp(1j * A) * np.sqrt(X)
        self.w = np.exp(1j * B) * np.sqrt(1 - X)
        self.weight_array = np.broadcast_to(
            self.wx / (self.n_alpha * self.n_beta), self.shape).copy()

    @classmethod
    @functools.lru_cache(maxsize=None)
    def for_degree(cls, D):
        return cls(D)

    @property
    def nodes(self):
        A, B, S = np.meshgrid(self.alpha, self.beta, self.s, indexing="ij")
        return np.stack([A.ravel(), B.ravel(), S.ravel()], axis=1)

    @property
    def weights(self):
        return self.weight_array.ravel()

    def integrate(self, values):
        return complex(np.sum(values * self.weight_array))

    def __repr__(self):
        return f"QuadratureGrid(exact_degree={self.exact_degree}, shape={self.shape})"


class PackedSpace:
    """Flat float coordinates of all blocks with p + q <= N.

    Block (p, q) occupies a contiguous slice; inside, entry a is the
    coefficient of e_{p,q,a}.  Operators Z1, Z1bar, T act by index shifts
    and diagonal factors; grid transforms go through the sector form.
    """

    _cache: dict = {}

    def __new__(cls, N):
        obj = cls._cache.get(N)
        if obj is None:
            obj = super().__new__(cls)
            obj._build(N)
            cls._cache[N] = obj
        return obj

    def _build(self, N):
        self.N = N
        self.offsets = {}
        ps, qs, as_ = [], [], []
        pos = 0
        for d in range(N + 1):
            for p in range(d, -1, -1):
                q = d - p
                self.offsets[(p, q)] = pos
                pos += d + 1
                ps += [p] * (d + 1)
                qs += [q] * (d + 1)
                as_ += list(range(d + 1))
        self.size = pos
        self.p = np.array(ps)
        self.q = np.array(qs)
        self.a = np.array(as_)
        self.degree = self.p + self.q
        self.m1 = self.a - self.q
        self.m2 = self.p - self.a
        self.n = self.q - np.maximum(0, -self.m1) - np.maximum(0, -self.m2)
        self.norm2 = np.array([float(basis_norm2(p, q, a)) for p, q, a in zip(ps, qs, as_)])
        self.kappa = np.array([jacobi_scale(p, q, a) for p, q, a in zip(ps, qs, as_)])
        idx = np.arange(self.size)
        # Z1: (p, q, a) -> (p-1, q+1, a) with factor 1
        src = idx[self.p >= 1]
        self.z1_src = src
        self.z1_dst = np.array([self.offsets[(p - 1, q + 1)] + a for p, q, a in
                                zip(self.p[src], self.q[src], self.a[src])], dtype=int)
        # Z1bar: (p, q, a) -> (p+1, q-1, a) with factor -(p+1) q
        src = idx[self.q >= 1]
        self.z1b_src = src
        self.z1b_dst = np.array([self.offsets[(p + 1, q - 1)] + a for p, q, a in
                                 zip(self.p[src], self.q[src], self.a[src])], dtype=int)
        self.z1b_fac = -(self.p[src] + 1.0) * self.q[src]
        self.T_eig = 1j * (self.p - self.q)
        self._grid_cache = {}

    def index(self, p, q):
        off = self.offsets[(p, q)]
        return slice(off, off + p + q + 1)

    def zeros(self):
        return np.zeros(self.size, dtype=complex)

    # conversions ----------------------------------------------------------
    def from_function(self, u: SphereFunction):
        vec = self.zeros()
        for (p, q), c in u.blocks.items():
            if p + q > self.N:
                raise ValueError(f"block ({p},{q}) exceeds packed degree {self.N}")
            vec[self.index(p, q)] = [complex(x) for x in c] if u.exact else c
        return vec

    def to_function(self, vec, weight=0, truncation=None):
        blocks = {}
        for (p, q), off in self.offsets.items():
            c = vec[off:off + p + q + 1]
            if np.any(c):
                blocks[(p, q)] = c.copy()
        return SphereFunction(blocks, weight, self.N if truncation is None else truncation,
                              exact=False)

    # operators ------------------------------------------------------------
    def Z1(self, vec):
        out = self.zeros()
        out[self.z1_dst] = vec[self.z1_src]
        return out

    def Z1bar(self, vec):
        out = self.zeros()
        out[self.z1b_dst] = vec[self.z1b_src] * self.z1b_fac
        return out

    def T(self, vec):
        return vec * self.T_eig

    def nabla0(self, vec, weight):
        return vec * (self.T_eig + 2j * weight)

    def conj(self, vec):
        out = self.zeros()
        for (p, q), off in self.offsets.items():
            c = vec[off:off + p + q + 1]
            o2 = self.offsets[(q, p)]
            out[o2:o2 + p + q + 1] = (np.conj(c) * _conj_ratio_float(p, q))[::-1]
        return out

    def inner(self, u, v):
        return complex(np.sum(u * np.conj(v) * self.norm2))

    def norm2_of(self, vec):
        return float(np.sum(np.abs(vec) ** 2 * self.norm2))

    def mask(self, pred):
        return pred(self.p, self.q).astype(bool)

    # grid transforms ------------------------------------------------------
    def _grid_data(self, grid: QuadratureGrid):
        key = id(grid)
        data = self._grid_cache.get(key)
        if data is not None and data[0] is grid:
            return data[1]
        xl = grid.x[None, :]
        al = np.abs(self.m1)[:, None]
        be = np.abs(self.m2)[:, None]
        B = (self.kappa[:, None]
             * eval_jacobi(self.n[:, None], al, be, 1 - 2 * xl)
             * xl ** (al / 2) * (1 - xl) ** (be / 2))
        rows = (self.m1 % grid.n_alpha) * grid.n_beta + (self.m2 % grid.n_beta)
        scatter = sparse.csr_matrix(
            (np.ones(self.size), (rows, np.arange(self.size))),
            shape=(grid.n_alpha * grid.n_beta, self.size))
        data = {"B": B, "rows": rows, "scatter": scatter,
                "WB": B * grid.wx[None, :] / self.norm2[:, None]}
        self._grid_cache[key] = (grid, data)
        return data

    def to_grid(self, vec, grid: QuadratureGrid):
        data = self._grid_data(grid)
        F = data["scatter"] @ (vec[:, None] * data["B"])
        F = np.asarray(F).reshape(grid.n_alpha, grid.n_beta, grid.n_x)
        return np.fft.ifft2(F, axes=(0, 1), norm="forward")

    def from_grid(self, values, grid: QuadratureGrid, check=True):
        if check and grid.exact_degree < 2 * self.N:
            raise GridTooCoarse(
                f"grid exact_degree {grid.exact_degree} < 2N = {2 * self.N}")
        data = self._grid_data(grid)
        F = np.fft.fft2(values, axes=(0, 1), norm="forward")
        F = F.reshape(grid.n_alpha * grid.n_beta, grid.n_x)[data["rows"]]
        return np.sum(F * data["WB"], axis=1)


def evaluate_grid(u: SphereFunction, grid: QuadratureGrid):
    """Values of u at every grid node, as an array of shape ``grid.shape``."""
    d = max(u.degree(), 0)
    space = PackedSpace(d)
    return space.to_grid(space.from_function(u), grid)


def grid_project(values, grid: QuadratureGrid, N: int, weight=0) -> SphereFunction:
    """Orthogonal projection of grid samples onto span{H_{p,q} : p + q <= N}."""
    if grid.exact_degree < 2 * N:
        raise GridTooCoarse(f"grid exact_degree {grid.exact_degree} < 2N = {2 * N}")
    values = np.asarray(values, dtype=complex).reshape(grid.shape)
    space = PackedSpace(N)
    return space.to_function(space.from_grid(values, grid), weight=weight, truncation=N)


def random_function(rng, support: Iterable, weight=0, truncation=None, exact=True,
                    max_num=5, max_den=4):
    """Random SphereFunction on the given blocks (small rationals in exact mode)."""
    blocks = {}
    for p, q in support:
        if exact:
            coeffs = [GaussQ(fmpq(int(rng.integers(-max_num, max_num + 1)),
                                  int(rng.integers(1, max_den + 1))),
                             fmpq(int(rng.integers(-max_num, max_num + 1)),
                                  int(rng.integers(1, max_den + 1))))
                      for _ in range(p + q + 1)]
        else:
            coeffs = rng.standard_normal(p + q + 1) + 1j * rng.standard_normal(p + q + 1)
        blocks[(p, q)] = coeffs
    return SphereFunction(blocks, weight, truncation, exact)
