"""Solvers for the tangency equation on S^3.

For a family of deformation tensors phi(t) and potentials f_t the equation is

    (Z1)^2 f + L_phi f = d/dt phi,

    L_phi f = phi (Z1 Z1bar + Z1bar Z1) f + phi^2 Z1bar^2 f
              + (Z1 phi) Z1bar f - (Z1bar phi) Z1 f - i (nabla0 phi) f.

Functions are split by block support: P1 keeps q >= 2 (image of (Z1)^2) and
P2 keeps q in {0, 1}.  Three solvers are provided:

* :func:`formal_series`: the power-series recursion in t.
* :func:`be_series`: the same recursion with a constant offset lambda in
  f_t, for linear families t * phidot in the Burns-Epstein cone.
* :func:`evolve_general`: a time stepper for the split system, with the
  P1 part of phi fixed to t * phidot and the P2 part relaxed by the
  stabilizing diagonal action of i nabla0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .errors import (
    FixedPointDiverged,
    NotBurnsEpstein,
    NotInfinitesimallyEmbeddable,
    StepRejected,
)
from .harmonics import (
    PackedSpace,
    QuadratureGrid,
    SphereFunction,
    evaluate_grid,
    multiply,
)
from .operators import (
    apply_nabla0,
    apply_Z1,
    apply_Z1bar,
    check_deformation,
    fs_norm,
    project,
    solve_Z1_squared,
    solver_constant,
    sublaplacian_eigencheck,
)
from .scalars import GaussQ, is_exact

DEFAULT_S = 10


# ---------------------------------------------------------------------------
# L_phi
# ---------------------------------------------------------------------------

def _sublaplacian(f: SphereFunction) -> SphereFunction:
    """(Z1 Z1bar + Z1bar Z1) f, computed from the two compositions."""
    return apply_Z1(apply_Z1bar(f)) + apply_Z1bar(apply_Z1(f))


class _FDerivs:
    """Derivatives of a weight-0 potential that enter L_phi."""

    def __init__(self, f: SphereFunction):
        f = f.with_weight(0)
        self.f = f
        self.lap = _sublaplacian(f)
        self.zb = apply_Z1bar(f)
        self.z = apply_Z1(f)
        self.zb2 = apply_Z1bar(self.zb)


class _PhiDerivs:
    def __init__(self, phi: SphereFunction):
        phi = phi.with_weight(2)
        self.phi = phi
        self.z = apply_Z1(phi)
        self.zb = apply_Z1bar(phi)
        self.n0 = apply_nabla0(phi)


def _mul(a, b, N):
    return multiply(a, b, N).with_weight(2)


def _L_terms(pd: _PhiDerivs, phi2: SphereFunction | None, fd: _FDerivs, N):
    mi = GaussQ(0, -1) if pd.phi.exact else -1j
    out = (_mul(pd.phi, fd.lap, N) + _mul(pd.z, fd.zb, N) - _mul(pd.zb, fd.z, N)
           + _mul(pd.n0, fd.f, N).scale(mi))
    if phi2 is not None and not phi2.is_zero():
        out = out + _mul(phi2, fd.zb2, N)
    return out


def apply_L(phi: SphereFunction, f: SphereFunction, N=None) -> SphereFunction:
    """L_phi f as a weight-2 tensor; ``truncated`` is set if blocks were dropped."""
    if N is None:
        N = _max_none(phi.truncation, f.truncation)
    pd = _PhiDerivs(phi)
    phi2 = multiply(pd.phi, pd.phi, N).with_weight(2)
    out = _L_terms(pd, phi2, _FDerivs(f), N)
    if out.is_zero():
        out = SphereFunction.zero(2, N, phi.exact)
    return out.with_weight(2)


def _max_none(a, b):
    if a is None or b is None:
        return None
    return max(a, b)


# ---------------------------------------------------------------------------
# Series results
# ---------------------------------------------------------------------------

@dataclass
class TangencySeries:
    """Coefficients of f_t = sum f^(k) t^k and phi(t) = sum phi^(k) t^k.

    ``f_coeffs[k]`` is f^(k) (with lambda included in f^(0)); ``phi_coeffs``
    holds phi^(1), ..., phi^(K+1), the last one being fixed by the order-K
    equation.
    """

    K: int
    f_coeffs: list
    phi_coeffs: list
    lam: float = 0.0
    norms: list = field(default_factory=list)
    s: int = DEFAULT_S
    radius_estimate: dict | None = None
    certificate: dict | None = None
    truncation: int | None = None
    truncated: bool = False
    kind: str = "formal"

    @property
    def phidot(self):
        return self.phi_coeffs[0]

    @property
    def f_tilde_coeffs(self):
        f0 = self.f_coeffs[0]
        lam = GaussQ.coerce(_as_exact_lambda(self.lam)) if f0.exact else self.lam
        shift = SphereFunction.constant(lam, 0, f0.truncation, exact=f0.exact)
        return [f0 - shift] + list(self.f_coeffs[1:])

    def f_at(self, t, order=None):
        return _sum_series(self.f_coeffs, t, order)

    def phi_at(self, t, order=None):
        return _sum_series([None] + self.phi_coeffs, t, order)

    def phidot_at(self, t, order=None):
        coeffs = [self.phi_coeffs[k].scale(k + 1) for k in range(len(self.phi_coeffs))]
        return _sum_series(coeffs, t, order)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "lambda": _lambda_json(self.lam),
            "s": self.s,
            "truncation": self.truncation,
            "truncated": self.truncated,
            "norms": [float(x) for x in self.norms],
            "radius_estimate": self.radius_estimate,
            "certificate": self.certificate,
            "f_coeffs": [f.to_json() for f in self.f_coeffs],
            "phi_coeffs": [p.to_json() for p in self.phi_coeffs],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TangencySeries":
        lam = data.get("lambda", 0.0)
        if isinstance(lam, str):
            from .scalars import parse_rational
            lam = parse_rational(lam)
        return cls(
            K=int(data["K"]),
            f_coeffs=[SphereFunction.from_json(d) for d in data["f_coeffs"]],
            phi_coeffs=[SphereFunction.from_json(d) for d in data["phi_coeffs"]],
            lam=lam,
            norms=list(data.get("norms", [])),
            s=int(data.get("s", DEFAULT_S)),
            radius_estimate=data.get("radius_estimate"),
            certificate=data.get("certificate"),
            truncation=data.get("truncation"),
            truncated=bool(data.get("truncated", False)),
            kind=data.get("kind", "formal"),
        )

    def norms_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["k", f"fs_norm_f_s{self.s}", "l2_norm_phi_k_plus_1"])
        for k, f in enumerate(self.f_coeffs):
            phi = self.phi_coeffs[k] if k < len(self.phi_coeffs) else None
            w.writerow([k, repr(float(self.norms[k])) if k < len(self.norms) else "",
                        repr(phi.norm()) if phi is not None else ""])
        return buf.getvalue()


def _lambda_json(lam):
    if is_exact(lam):
        from .scalars import format_rational, to_fmpq
        return format_rational(to_fmpq(lam))
    return float(lam)


def _as_exact_lambda(lam):
    if is_exact(lam):
        return lam
    from fractions import Fraction
    return Fraction(lam).limit_denominator(10 ** 12) if lam != int(lam) else int(lam)


def _sum_series(coeffs, t, order=None):
    """sum_k coeffs[k] t^k (Horner); ``None`` entries count as zero."""
    terms = [(k, c) for k, c in enumerate(coeffs) if c is not None]
    if order is not None:
        terms = [(k, c) for k, c in terms if k <= order]
    if not terms:
        raise ValueError("empty series")
    exact = terms[0][1].exact
    if exact and not is_exact(t):
        coeffs = [c.to_float() if c is not None else None for c in coeffs]
        return _sum_series(coeffs, t, order)
    top = max(k for k, _ in terms)
    by_k = dict(terms)
    acc = None
    for k in range(top, -1, -1):
        acc = acc.scale(t) if acc is not None else None
        c = by_k.get(k)
        if c is not None:
            acc = c if acc is None else acc + c
    return acc


# ---------------------------------------------------------------------------
# Recursion
# ---------------------------------------------------------------------------

def _check_D0(phidot: SphereFunction):
    tol = None if phidot.exact else config.get().zero
    bad = [(p, q) for (p, q) in phidot.support(tol) if q <= 1]
    if bad:
        raise NotInfinitesimallyEmbeddable(
            f"phidot has components with q in {{0, 1}}: {bad}", bad)


def _check_BE(phidot: SphereFunction):
    tol = None if phidot.exact else config.get().zero
    bad = [(p, q) for (p, q) in phidot.support(tol) if q < p + 4]
    if bad:
        raise NotBurnsEpstein(f"phidot has components with q < p + 4: {bad}", bad)


def _recursion(phidot: SphereFunction, K: int, N, lam, kind: str, s: int) -> TangencySeries:
    phidot = phidot.with_weight(2)
    exact = phidot.exact
    if exact:
        lam_s = GaussQ.coerce(_as_exact_lambda(lam))
        mi = GaussQ(0, -1)
    else:
        lam_s = complex(lam)
        mi = -1j
    zero2 = SphereFunction.zero(2, N, exact)
    f_tilde = [solve_Z1_squared(phidot).with_truncation(N).with_weight(0)]
    phis = [phidot]
    phi_d = [_PhiDerivs(phidot)]
    phi2 = []               # phi2[j-1] = t^j coefficient of phi^2
    f_d = [_FDerivs(f_tilde[0])]
    truncated = f_tilde[0].truncated
    for k in range(1, K + 1):
        # t^k coefficient of phi^2 is needed by L^(k)
        acc2 = zero2
        for i in range(1, k):
            acc2 = acc2 + multiply(phis[i - 1], phis[k - i - 1], N).with_weight(2)
        phi2.append(acc2 if k > 1 else None)
        S = zero2
        for j in range(1, k + 1):
            S = S + _L_terms(phi_d[j - 1], phi2[j - 1], f_d[k - j], N)
        if lam_s != 0 and k - 1 < len(phis):
            S = S + phi_d[k - 1].n0.scale(mi * lam_s)
        truncated = truncated or S.truncated
        A = project(S, "Q_GE_2")
        B = project(S, "Q_IN_01")
        fk = solve_Z1_squared(-A).with_weight(0)
        f_tilde.append(fk)
        f_d.append(_FDerivs(fk))
        nxt = B.scale(GaussQ(1) / (k + 1) if exact else 1 / (k + 1)).with_weight(2)
        phis.append(nxt)
        phi_d.append(_PhiDerivs(nxt))
    f_coeffs = list(f_tilde)
    const = SphereFunction.constant(lam_s, 0, N, exact=exact)
    f_coeffs[0] = f_coeffs[0] + const if lam_s != 0 else f_coeffs[0]
    norms = [fs_norm(f, s) for f in f_tilde]
    return TangencySeries(K=K, f_coeffs=f_coeffs, phi_coeffs=phis, lam=lam, norms=norms,
                          s=s, truncation=N, truncated=truncated, kind=kind)


def formal_series(phidot: SphereFunction, K: int, N=None, s: int = DEFAULT_S) -> TangencySeries:
    """Formal solution of the tangency equation with phi'(0) = phidot."""
    _check_D0(phidot)
    return _recursion(phidot, K, N, 0, "formal", s)


def be_series(phidot: SphereFunction, lam, K: int, N=None, s: int = DEFAULT_S,
              t_samples=None, grid=None, R=None) -> TangencySeries:
    """Series f_t = lam + f~_t for phi(t) = t * phidot in the Burns-Epstein cone.

    Also attaches the radius estimate and a strict-sign certificate: the
    minimum over sample times t in [0, 1] and grid nodes of |Re f_t|.
    """
    _check_BE(phidot)
    series = _recursion(phidot, K, N, lam, "be", s)
    series.radius_estimate = radius_estimate(phidot, s, lam=lam, R=R)
    series.certificate = sign_certificate(series, t_samples, grid)
    return series


def sign_certificate(series: TangencySeries, t_samples=None, grid=None) -> dict:
    """min over t samples in [0, 1] and grid nodes of |Re f_t|, with sign info."""
    if t_samples is None:
        t_samples = np.linspace(0.0, 1.0, 21)
    coeffs = [f.to_float() for f in series.f_coeffs]
    deg = max(max(c.degree(), 0) for c in coeffs)
    if grid is None:
        grid = QuadratureGrid.for_degree(max(2 * deg, 4))
    vals = [np.real(evaluate_grid(c, grid)) for c in coeffs]
    mins, signs = [], set()
    for t in t_samples:
        re = sum(v * t ** k for k, v in enumerate(vals))
        mins.append(float(np.min(np.abs(re))))
        signs.update(np.unique(np.sign(re)).tolist())
    strict = len(signs) == 1 and 0.0 not in signs
    margin = config.get().sign_margin
    return {"min_abs_re": float(min(mins)), "t_samples": [float(t) for t in t_samples],
            "strict_sign": bool(strict and min(mins) > margin),
            "sign": int(next(iter(signs))) if strict else 0}


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _ser_mul(a, b, order, N):
    out = []
    for k in range(order + 1):
        acc = None
        for i in range(k + 1):
            if i < len(a) and k - i < len(b) and a[i] is not None and b[k - i] is not None:
                term = multiply(a[i], b[k - i], N).with_weight(2)
                acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _ser_add(*series):
    n = max(len(s) for s in series)
    out = []
    for k in range(n):
        acc = None
        for s in series:
            if k < len(s) and s[k] is not None:
                acc = s[k].with_weight(2) if acc is None else acc + s[k].with_weight(2)
        out.append(acc)
    return out


def _ser_map(fn, s):
    return [fn(x) if x is not None else None for x in s]


def polynomial_residual_series(series: TangencySeries, order=None, N=None):
    """t-coefficients 0..order of (Z1 + phi Z1bar)^2 f - (Z1bar phi)(Z1 + phi Z1bar) f
    - i (nabla0 phi) f - phi'(t).

    The frame operator D = Z1 + phi Z1bar is applied twice with series
    arithmetic, independently of the L^(j) expansion used by the solvers.
    """
    K = series.K if order is None else order
    f = [c.with_weight(0) for c in series.f_coeffs[:K + 1]]
    phi = [None] + [c.with_weight(2) for c in series.phi_coeffs[:K + 1]]
    if N is None:
        N = series.truncation
    exact = f[0].exact
    mi = GaussQ(0, -1) if exact else -1j

    def D(u):
        return _ser_add(_ser_map(apply_Z1, u), _ser_mul(phi, _ser_map(apply_Z1bar, u), K, N))

    g = D(f)
    Dg = D(g)
    zb_phi = _ser_map(apply_Z1bar, phi)
    n0_phi = _ser_map(apply_nabla0, phi)
    t1 = _ser_mul(zb_phi, g, K, N)
    t2 = _ser_map(lambda x: x.scale(mi), _ser_mul(n0_phi, f, K, N))
    dphi = [series.phi_coeffs[k].with_weight(2).scale(k + 1) for k in range(K + 1)]
    res = _ser_add(Dg, _ser_map(lambda x: -x, t1), t2, _ser_map(lambda x: -x, dphi))
    return [r if r is not None else SphereFunction.zero(2, N, exact) for r in res[:K + 1]]


def _pointwise_parts(phi, f, grid):
    """Grid values of phi, f and the frame derivatives used by both residual forms."""
    phi = phi.to_float().with_weight(2)
    f = f.to_float().with_weight(0)
    ev = lambda u: evaluate_grid(u, grid)
    v = {
        "phi": ev(phi), "phi_1": ev(apply_Z1(phi)), "phi_1b": ev(apply_Z1bar(phi)),
        "phi_0": ev(apply_nabla0(phi)),
        "f": ev(f), "f_1": ev(apply_Z1(f)), "f_1b": ev(apply_Z1bar(f)),
        "f_11": ev(apply_Z1(apply_Z1(f))), "f_1b1b": ev(apply_Z1bar(apply_Z1bar(f))),
        "f_11b": ev(apply_Z1bar(apply_Z1(f))), "f_1b1": ev(apply_Z1(apply_Z1bar(f))),
    }
    v["phibar"] = np.conj(v["phi"])
    v["phibar_1"] = np.conj(v["phi_1b"])
    v["phibar_1b"] = np.conj(v["phi_1"])
    v["phibar_0"] = np.conj(v["phi_0"])
    # D f and D^2 f with D = Z1 + phi Z1bar, by the Leibniz rule
    v["Df"] = v["f_1"] + v["phi"] * v["f_1b"]
    # Z1(Z1 f) + Z1(phi Z1bar f) + phi Z1bar(Z1 f) + phi Z1bar(phi Z1bar f)
    v["D2f"] = (v["f_11"] + v["phi_1"] * v["f_1b"] + v["phi"] * v["f_1b1"]
                + v["phi"] * v["f_11b"] + v["phi"] * v["phi_1b"] * v["f_1b"]
                + v["phi"] ** 2 * v["f_1b1b"])
    return v


def residual_on_grid(phi, f, phidot, form="POLYNOMIAL", grid=None):
    """Tangency residual at one time, evaluated on a quadrature grid.

    POLYNOMIAL: D^2 f - phi_{,1b} D f - i phi_{,0} f - phidot.
    PSEUDOHERMITIAN: Zt^2 f - omega_11 Zt f + i A11 f - phidot / (1 - |phi|^2),
    with Zt = D / sqrt(1 - |phi|^2) and the connection data in lemma form.
    """
    if grid is None:
        d = max(phi.degree(), 0) + max(f.degree(), 0)
        grid = QuadratureGrid.for_degree(2 * d + 4)
    v = _pointwise_parts(phi, f, grid)
    pd = evaluate_grid(phidot.to_float(), grid)
    if form == "POLYNOMIAL":
        return v["D2f"] - v["phi_1b"] * v["Df"] - 1j * v["phi_0"] * v["f"] - pd
    if form != "PSEUDOHERMITIAN":
        raise ValueError(f"unknown residual form {form!r}")
    check_deformation(v["phi"])
    ph, phb = v["phi"], v["phibar"]
    mod2 = np.abs(ph) ** 2
    one = 1 - mod2
    omega_11 = (2 * v["phi_1b"] + ph * v["phibar_1"] + phb * v["phi_1"]
                + ph ** 2 * v["phibar_1b"] - mod2 * v["phi_1b"]) / (2 * one ** 1.5)
    A11 = -v["phi_0"] / one
    D_mod2 = phb * v["phi_1"] + ph * v["phibar_1"] + mod2 * v["phi_1b"] + ph ** 2 * v["phibar_1b"]
    D_inv_sqrt = 0.5 * one ** -1.5 * D_mod2
    Zt2f = v["D2f"] / one + D_inv_sqrt * v["Df"] / np.sqrt(one)
    Ztf = v["Df"] / np.sqrt(one)
    return Zt2f - omega_11 * Ztf + 1j * A11 * v["f"] - pd / one


def tangency_residual(source, form="POLYNOMIAL", t=None, grid=None, order=None):
    """Residual of the tangency equation.

    ``source`` is a :class:`TangencySeries` or a tuple (phi, f, phidot) of
    SphereFunctions at a fixed time.  For a series with ``t=None`` and the
    POLYNOMIAL form, returns the list of t-coefficients of the residual
    (exact for exact series).  Otherwise returns grid values at time t.
    """
    if isinstance(source, TangencySeries):
        if t is None:
            if form != "POLYNOMIAL":
                raise ValueError("the PSEUDOHERMITIAN form needs a time t")
            return polynomial_residual_series(source, order)
        order = source.K if order is None else order
        phi = source.phi_at(t, order + 1)
        f = source.f_at(t, order)
        phidot = source.phidot_at(t, order)
        return residual_on_grid(phi, f, phidot, form, grid)
    phi, f, phidot = source
    return residual_on_grid(phi, f, phidot, form, grid)


# ---------------------------------------------------------------------------
# Radius estimate
# ---------------------------------------------------------------------------

def solver_constant_sup(s: int) -> float:
    """Sup over all blocks of ||solve g||_s / ||g||_{s-2}: the p = 0, q -> oo limit."""
    return math.sqrt(5.0 ** s / 2.0)


def radius_estimate(phidot: SphereFunction, s: int = DEFAULT_S, N=None, lam=0.0, R=None,
                    margin=1e-4) -> dict:
    """Constants C, C_s and the convergence radius R_s = 1 / (C_s ||phidot||_s).

    C is the larger of the truncation sup (blocks with p + q <= N) and the
    all-block sup, so the estimate holds for every truncation.  C_s is the
    smallest root of C_s^2 = C (5 C_s + 1), enlarged for lambda and a target
    radius R when given, and scaled by (1 + margin) to make it strict.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    if N is None:
        N = max(phidot.degree(), 2)
    C_trunc, arg = solver_constant(s, N)
    C = max(C_trunc, solver_constant_sup(s))
    cs = (5 * C + math.sqrt(25 * C * C + 4 * C)) / 2
    lam = float(lam)
    if R is not None and lam != 0:
        b = C * abs(lam) * R
        cs = max(cs, (b + math.sqrt(b * b + 20 * C * C)) / 2)
    cs *= 1 + margin
    nrm = fs_norm(phidot, s)
    Rs = math.inf if nrm == 0 else 1.0 / (cs * nrm)
    out = {"s": s, "C": C, "C_truncation": C_trunc, "C_argmax_block": list(arg) if arg else None,
           "C_s": cs, "phidot_norm_s": nrm, "R_s": Rs,
           "inequality_ok": cs * cs > C * (5 * cs + 1)}
    if R is not None:
        out["R"] = R
        out["epsilon"] = 1.0 / (cs * R)
    return out


def growth_ratios(series: TangencySeries):
    """Observed ||f^(k)||_s / ||f^(k-1)||_s for the non-constant parts."""
    norms = [fs_norm(f, series.s) for f in series.f_tilde_coeffs]
    return [norms[k] / norms[k - 1] if norms[k - 1] else math.nan for k in range(1, len(norms))]


# ---------------------------------------------------------------------------
# Parabolic solver for general phidot
# ---------------------------------------------------------------------------

class FloatL:
    """L_phi on packed float vectors via a quadrature grid.

    The grid has exact degree >= 4N so the cubic term phi^2 Z1bar^2 f is
    projected back to degree N without aliasing.
    """

    def __init__(self, N: int, grid: QuadratureGrid | None = None):
        self.space = sp = PackedSpace(N)
        self.grid = grid or QuadratureGrid.for_degree(4 * N)
        self.lap_eig = -np.array([sublaplacian_eigencheck(p, q) for p, q in zip(sp.p, sp.q)],
                                 dtype=float)
        self._phi = None

    def set_phi(self, phi_vec):
        sp, g = self.space, self.grid
        self._phi = phi_vec
        phi = sp.to_grid(phi_vec, g)
        self.phi_g = phi
        self.phi2_g = phi * phi
        self.phi_1 = sp.to_grid(sp.Z1(phi_vec), g)
        self.phi_1b = sp.to_grid(sp.Z1bar(phi_vec), g)
        self.phi_0 = sp.to_grid(sp.nabla0(phi_vec, 2), g)
        return phi

    def apply(self, f_vec):
        sp, g = self.space, self.grid
        fb = sp.Z1bar(f_vec)
        vals = (self.phi_g * sp.to_grid(self.lap_eig * f_vec, g)
                + self.phi2_g * sp.to_grid(sp.Z1bar(fb), g)
                + self.phi_1 * sp.to_grid(fb, g)
                - self.phi_1b * sp.to_grid(sp.Z1(f_vec), g)
                - 1j * self.phi_0 * sp.to_grid(f_vec, g))
        return sp.from_grid(vals, g, check=False)


@dataclass
class Trajectory:
    """Sampled solution of the split system: f_t = lam + f~_t, phi(t) = t phidot + psi(t)."""

    times: list
    f_samples: list
    phi_samples: list
    lam: float
    dt: float
    N: int
    method: str
    fixed_point_tol: float
    contraction: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def sample(self, t):
        """Linear interpolation of (f, phi) at time t."""
        ts = np.asarray(self.times)
        if t <= ts[0]:
            return self.f_samples[0], self.phi_samples[0]
        if t >= ts[-1]:
            return self.f_samples[-1], self.phi_samples[-1]
        i = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        f = self.f_samples[i].scale(1 - w) + self.f_samples[i + 1].scale(w)
        phi = self.phi_samples[i].scale(1 - w) + self.phi_samples[i + 1].scale(w)
        return f, phi

    def to_json(self) -> dict:
        return {"kind": "trajectory", "lambda": float(self.lam), "dt": self.dt, "N": self.N,
                "method": self.method, "fixed_point_tol": self.fixed_point_tol,
                "times": [float(t) for t in self.times],
                "f_samples": [f.to_json() for f in self.f_samples],
                "phi_samples": [p.to_json() for p in self.phi_samples],
                "contraction": [float(c) for c in self.contraction]}

    @classmethod
    def from_json(cls, data):
        return cls(times=list(data["times"]),
                   f_samples=[SphereFunction.from_json(d) for d in data["f_samples"]],
                   phi_samples=[SphereFunction.from_json(d) for d in data["phi_samples"]],
                   lam=float(data["lambda"]), dt=float(data["dt"]), N=int(data["N"]),
                   method=data.get("method", "etd2"),
                   fixed_point_tol=float(data.get("fixed_point_tol", 0.0)),
                   contraction=list(data.get("contraction", [])))

    def residuals_csv(self, phidot: SphereFunction | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["t", "psi_l2", "f_l2", "contraction"])
        for k, t in enumerate(self.times):
            phi = self.phi_samples[k]
            psi = project(phi, "Q_IN_01").norm()
            c = self.contraction[k] if k < len(self.contraction) else ""
            w.writerow([repr(float(t)), repr(psi), repr(self.f_samples[k].norm()), c])
        return buf.getvalue()


def _fixed_point(Lop: FloatL, rhs_solved, P1, f0, tol, max_iter):
    """Iterate f <- solve(rhs) - solve(P1 L f) until the relative increment is below tol."""
    sp = Lop.space
    f = f0
    prev_delta = None
    ratios = []
    for it in range(1, max_iter + 1):
        Lf = Lop.apply(f)
        f_new = rhs_solved - _solve_packed(sp, Lf * P1)
        delta = math.sqrt(sp.norm2_of(f_new - f))
        scale = max(math.sqrt(sp.norm2_of(f_new)), 1e-300)
        if prev_delta is not None and prev_delta > 0:
            ratios.append(delta / prev_delta)
        f = f_new
        if delta <= tol * scale or delta == 0.0:
            return f, it, (max(ratios) if ratios else 0.0)
        if prev_delta is not None and delta > prev_delta and it > 3:
            raise FixedPointDiverged(
                f"fixed-point increment grew from {prev_delta:.3e} to {delta:.3e} at iteration {it}")
        prev_delta = delta
    raise FixedPointDiverged(f"no convergence after {max_iter} iterations (increment {delta:.3e})")


def _solve_packed(sp: PackedSpace, vec):
    from .operators import packed_solve_Z1_squared
    return packed_solve_Z1_squared(sp, vec)


def _phi1(x):
    """(e^x - 1) / x, stable near 0."""
    out = np.ones_like(x)
    big = np.abs(x) > 1e-8
    out[big] = np.expm1(x[big]) / x[big]
    out[~big] = 1 + x[~big] / 2
    return out


def _phi2(x):
    """(e^x - 1 - x) / x^2, stable near 0."""
    out = np.full_like(x, 0.5)
    big = np.abs(x) > 1e-4
    out[big] = (np.expm1(x[big]) - x[big]) / x[big] ** 2
    small = ~big
    out[small] = 0.5 + x[small] / 6 + x[small] ** 2 / 24
    return out


def evolve_general(phidot: SphereFunction, lam: float, T_end: float, dt: float = 1e-3,
                   N: int = 12, method: str = "etd2", sample_every: int = 1,
                   psi0: SphereFunction | None = None, tol=None, max_iter=None,
                   grid: QuadratureGrid | None = None) -> Trajectory:
    """Time-step the split tangency system for lam < 0.

    P1 phi = t phidot; f~ solves f~ = solve(phidot + i lam nabla0(t phidot) - P1 L_phi f~)
    by fixed-point iteration; psi = P2 phi obeys
    psi' = lam (p - q + 4) psi + P2 L_phi f~ blockwise.  ``method`` is "etd2"
    (exponential time differencing, second order) or "euler" (exponential
    Euler).  ``psi0`` seeds a nonzero initial P2 part.
    """
    if not lam < 0:
        raise ValueError("evolve_general requires lam < 0")
    if not (dt > 0 and math.isfinite(dt)):
        raise StepRejected(f"dt must be positive and finite, got {dt}")
    if T_end < 0:
        raise StepRejected("T_end must be non-negative")
    if method not in ("etd2", "euler"):
        raise ValueError(f"unknown method {method!r}")
    tol = config.get().fixed_point if tol is None else tol
    max_iter = config.get().fixed_point_max_iter if max_iter is None else max_iter
    _check_D0(phidot)
    Lop = FloatL(N, grid)
    sp = Lop.space
    pd_vec = sp.from_function(phidot.to_float())
    n0_pd = sp.nabla0(pd_vec, 2)
    P1 = (sp.q >= 2).astype(float)
    P2 = 1.0 - P1
    rate = lam * (sp.p - sp.q + 4) * P2          # psi' = rate * psi + P2 L f
    max_rate = float(np.max(np.abs(rate)))
    if dt * max_rate > config.get().max_rate_dt:
        raise StepRejected(f"dt * max decay rate = {dt * max_rate:.3g} exceeds "
                           f"{config.get().max_rate_dt}")
    psi = sp.zeros() if psi0 is None else sp.from_function(psi0.to_float()) * P2
    n_steps = int(round(T_end / dt))
    if abs(n_steps * dt - T_end) > 1e-9 * max(1.0, T_end):
        raise StepRejected(f"T_end = {T_end} is not a multiple of dt = {dt}")

    def nonlinear(t, psi_vec, f_guess):
        phi_vec = t * pd_vec + psi_vec
        phi_g = Lop.set_phi(phi_vec)
        check_deformation(phi_g)
        rhs = pd_vec + 1j * lam * t * n0_pd
        f, its, contr = _fixed_point(Lop, _solve_packed(sp, rhs * P1), P1, f_guess, tol, max_iter)
        Lf = Lop.apply(f)
        return f, Lf * P2, its, contr

    E = np.exp(rate * dt)
    c1 = dt * _phi1(rate * dt)
    c2 = dt * _phi2(rate * dt)

    t = 0.0
    f_vec = _solve_packed(sp, pd_vec)
    f_vec, N_n, its, contr = nonlinear(t, psi, f_vec)
    times, fs, phis, contrs, iters = [], [], [], [], []

    def record(t, f_vec, psi, contr, its):
        times.append(t)
        fs.append(sp.to_function(f_vec + lam * (sp.degree == 0), 0))
        phis.append(sp.to_function(t * pd_vec + psi, 2))
        contrs.append(contr)
        iters.append(its)

    record(t, f_vec, psi, contr, its)
    for n in range(1, n_steps + 1):
        t_new = n * dt
        a = E * psi + c1 * N_n
        if method == "etd2":
            _, N_a, _, _ = nonlinear(t_new, a, f_vec)
            psi = a + c2 * (N_a - N_n)
        else:
            psi = a
        f_vec, N_n, its, contr = nonlinear(t_new, psi, f_vec)
        t = t_new
        if n % sample_every == 0 or n == n_steps:
            record(t, f_vec, psi, contr, its)
    return Trajectory(times=times, f_samples=fs, phi_samples=phis, lam=lam, dt=dt, N=N,
                      method=method, fixed_point_tol=tol, contraction=contrs, iterations=iters)


def exponential_map(phidot: SphereFunction, lam: float, dt: float = 1e-3, N: int = 12,
                    **kw) -> SphereFunction:
    """phi(1) of the canonical family with phi'(0) = phidot."""
    if phidot.is_zero(tol=0.0):
        return SphereFunction.zero(2, N, exact=False)
    traj = evolve_general(phidot, lam, 1.0, dt, N, sample_every=int(round(1.0 / dt)), **kw)
    return traj.phi_samples[-1]
