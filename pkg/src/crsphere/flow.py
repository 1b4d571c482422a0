"""Transport flow realizing a family of deformations as hypersurfaces of C^2.

Given potentials F_t and deformation tensors phi(t) on S^3, the map
Psi_t = (Psi^1, Psi^2): S^3 -> C^2 and the real conformal exponent gamma_t
evolve by

    dPsi/dt   = (i/2) F T Psi - 1/2 [(Z1bar^t F)(Z1^t Psi) + conj(Z1bar^t F)(Z1bar^t Psi)]
    dgamma/dt = -Re(kappa0 F - (i/2) T F + (Z1^t gamma)(Z1bar^t F)
                    - (Z1bar^t gamma)(Z1^t F) - i (T gamma) F)

with Z1^t = (Z1 + phi Z1bar) / sqrt(1 - |phi|^2).  Each product of a
Z1^t-derivative with a Z1bar^t-derivative is formed as
(Z1 u + phi Z1bar u)(Z1bar v + conj(phi) Z1 v) / (1 - |phi|^2), so no
square roots are taken.

Derivatives are spectral (packed coefficient vectors), products are
pointwise on a quadrature grid, and every stage is projected back to
degree N.  Time stepping is classical RK4.

The CR residual max |Z1^t conj(Psi^a)| vanishes exactly when Psi_t maps the
deformed (1,0) direction to a (1,0) vector of C^2.  With this package's
frame, Psi_t realizes phi(t) when the transport potential is
F_t = 2 conj(f_t), where f_t solves the tangency equation
(Z1)^2 f + L_phi f = phi'.  :func:`integrate` uses that potential by
default; ``convention="literal"`` feeds f_t itself.
"""

from __future__ import annotations

import csv
import io
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import config
from .errors import GridTooCoarse, SignLost, StepRejected
from .harmonics import PackedSpace, Polynomial, QuadratureGrid, SphereFunction, harmonic_decompose
from .operators import check_deformation

# Transverse curvature of the unit sphere for rho = 1 - |z|^2 - |w|^2, the
# defining function whose d^c rho has Reeb field T (T e_{p,q} = i(p-q) e_{p,q}).
KAPPA0 = 1.0

CONVENTIONS = ("transport", "literal")


def kappa0() -> float:
    """Transverse curvature of the round unit sphere (a constant)."""
    return KAPPA0


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingState:
    """Psi_t = (Psi1, Psi2) and gamma_t at time t, truncated to degree N."""

    t: float
    Psi1: SphereFunction
    Psi2: SphereFunction
    gamma: SphereFunction
    grid: QuadratureGrid
    N: int
    info: dict = field(default_factory=dict)

    @classmethod
    def identity(cls, N: int, grid: QuadratureGrid | None = None) -> "EmbeddingState":
        if N < 1:
            raise ValueError("N must be at least 1")
        grid = default_grid(N) if grid is None else grid
        z = harmonic_decompose(Polynomial.z()).to_float().with_truncation(N)
        w = harmonic_decompose(Polynomial.w()).to_float().with_truncation(N)
        return cls(0.0, z, w, SphereFunction.zero(0, N, exact=False), grid, N)

    def packed(self):
        sp = PackedSpace(self.N)
        return (sp.from_function(self.Psi1.to_float()), sp.from_function(self.Psi2.to_float()),
                sp.from_function(self.gamma.to_float()))

    @classmethod
    def from_packed(cls, t, psi1, psi2, gamma, grid, N, info=None):
        sp = PackedSpace(N)
        return cls(t, sp.to_function(psi1), sp.to_function(psi2), sp.to_function(gamma),
                   grid, N, dict(info or {}))

    def values(self, grid: QuadratureGrid | None = None):
        """Grid values (Psi1, Psi2, gamma)."""
        grid = self.grid if grid is None else grid
        sp = PackedSpace(self.N)
        return tuple(sp.to_grid(v, grid) for v in self.packed())

    def to_json(self) -> dict:
        return {"t": float(self.t), "N": self.N, "grid_degree": self.grid.exact_degree,
                "Psi1": self.Psi1.to_json(), "Psi2": self.Psi2.to_json(),
                "gamma": self.gamma.to_json(), "info": self.info}

    @classmethod
    def from_json(cls, data: dict) -> "EmbeddingState":
        return cls(float(data["t"]), SphereFunction.from_json(data["Psi1"]),
                   SphereFunction.from_json(data["Psi2"]), SphereFunction.from_json(data["gamma"]),
                   QuadratureGrid.for_degree(int(data["grid_degree"])), int(data["N"]),
                   dict(data.get("info", {})))


def default_grid(N: int) -> QuadratureGrid:
    return QuadratureGrid.for_degree(2 * N + 4)


def _check_grid(grid, N):
    if grid.exact_degree < 2 * N:
        raise GridTooCoarse(f"grid exact_degree {grid.exact_degree} < 2N = {2 * N}")


# ---------------------------------------------------------------------------
# Pointwise data of potentials and deformations
# ---------------------------------------------------------------------------

class _Field:
    """Grid values of a function and its Z1, Z1bar, T derivatives."""

    __slots__ = ("v", "d1", "d1b", "dT")

    def __init__(self, v, d1, d1b, dT):
        self.v, self.d1, self.d1b, self.dT = v, d1, d1b, dT

    @classmethod
    def from_packed(cls, sp: PackedSpace, vec, grid):
        g = lambda x: sp.to_grid(x, grid)
        return cls(g(vec), g(sp.Z1(vec)), g(sp.Z1bar(vec)), g(sp.T(vec)))

    @classmethod
    def from_function(cls, u: SphereFunction, grid):
        sp = PackedSpace(max(u.degree(), 0))
        return cls.from_packed(sp, sp.from_function(u.to_float()), grid)

    @classmethod
    def zero(cls, grid):
        z = np.zeros(grid.shape, dtype=complex)
        return cls(z, z, z, z)


def _phi_values(phi, grid):
    if phi is None:
        return np.zeros(grid.shape, dtype=complex)
    if isinstance(phi, np.ndarray):
        return phi
    if phi.is_zero(tol=0.0):
        return np.zeros(grid.shape, dtype=complex)
    sp = PackedSpace(max(phi.degree(), 0))
    return sp.to_grid(sp.from_function(phi.to_float()), grid)


def _field(F, grid):
    if isinstance(F, _Field):
        return F
    if F is None or F.is_zero(tol=0.0):
        return _Field.zero(grid)
    return _Field.from_function(F, grid)


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------

def _rhs(sp: PackedSpace, grid, psi1, psi2, gamma, F: _Field, phi):
    """Packed time derivatives of (Psi1, Psi2, gamma)."""
    one = 1.0 - np.abs(phi) ** 2
    phib = np.conj(phi)
    # sqrt(1-|phi|^2) Z1bar^t F and sqrt(1-|phi|^2) Z1^t F, each divided by 1-|phi|^2
    A = (F.d1b + phib * F.d1) / one
    B = (F.d1 + phi * F.d1b) / one
    out = []
    for psi in (psi1, psi2):
        d1 = sp.to_grid(sp.Z1(psi), grid)
        d1b = sp.to_grid(sp.Z1bar(psi), grid)
        dT = sp.to_grid(sp.T(psi), grid)
        vel = 0.5j * F.v * dT - 0.5 * (A * (d1 + phi * d1b) + np.conj(A) * (d1b + phib * d1))
        out.append(sp.from_grid(vel, grid, check=False))
    g1 = sp.to_grid(sp.Z1(gamma), grid)
    g1b = sp.to_grid(sp.Z1bar(gamma), grid)
    gT = sp.to_grid(sp.T(gamma), grid)
    inner = (KAPPA0 * F.v - 0.5j * F.dT + (g1 + phi * g1b) * A
             - (g1b + phib * g1) * B - 1j * gT * F.v)
    out.append(sp.from_grid(-np.real(inner).astype(complex), grid, check=False))
    return out


def velocity(state: EmbeddingState, F, phi=None):
    """(dPsi1/dt, dPsi2/dt, dgamma/dt) as SphereFunctions for potential F and deformation phi."""
    sp = PackedSpace(state.N)
    grid = state.grid
    _check_grid(grid, state.N)
    phi_v = _phi_values(phi, grid)
    check_deformation(phi_v)
    d = _rhs(sp, grid, *state.packed(), _field(F, grid), phi_v)
    return tuple(sp.to_function(v) for v in d)


def step(state: EmbeddingState, f_t, phi_t, dt: float, f_next=None, phi_next=None,
         f_mid=None, phi_mid=None) -> EmbeddingState:
    """One RK4 step of the transport system with potential ``f_t``.

    ``f_t``/``phi_t`` are the data at ``state.t``; the midpoint and endpoint
    data default to the same values (frozen coefficients).  Any of them may
    be a SphereFunction; ``phi`` may also be grid values.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise StepRejected(f"dt must be positive and finite, got {dt}")
    grid = state.grid
    _check_grid(grid, state.N)
    sp = PackedSpace(state.N)
    F0 = _field(f_t, grid)
    Fm = F0 if f_mid is None else _field(f_mid, grid)
    F1 = Fm if f_next is None else _field(f_next, grid)
    p0 = _phi_values(phi_t, grid)
    pm = p0 if phi_mid is None else _phi_values(phi_mid, grid)
    p1 = pm if phi_next is None else _phi_values(phi_next, grid)
    for p in (p0, pm, p1):
        check_deformation(p)
    y = list(state.packed())
    y_new = _rk4(sp, grid, y, dt, (F0, p0), (Fm, pm), (F1, p1))
    return EmbeddingState.from_packed(state.t + dt, *y_new, grid, state.N)


def _rk4(sp, grid, y, dt, d0, dm, d1):
    k1 = _rhs(sp, grid, *y, *d0)
    k2 = _rhs(sp, grid, *[a + 0.5 * dt * b for a, b in zip(y, k1)], *dm)
    k3 = _rhs(sp, grid, *[a + 0.5 * dt * b for a, b in zip(y, k2)], *dm)
    k4 = _rhs(sp, grid, *[a + dt * b for a, b in zip(y, k3)], *d1)
    return [a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


# ---------------------------------------------------------------------------
# Residual and diagnostics
# ---------------------------------------------------------------------------

def _cr_residual_values(sp, grid, psi_vecs, phi):
    one = 1.0 - np.abs(phi) ** 2
    total = np.zeros(grid.shape)
    for psi in psi_vecs:
        d1 = sp.to_grid(sp.Z1(psi), grid)
        d1b = sp.to_grid(sp.Z1bar(psi), grid)
        # Z1^t conj(Psi) = (conj(Z1bar Psi) + phi conj(Z1 Psi)) / sqrt(1 - |phi|^2)
        total += np.abs(np.conj(d1b) + phi * np.conj(d1)) ** 2 / one
    return float(np.sqrt(np.max(total)))


def cr_residual(state: EmbeddingState, phi_t=None, grid: QuadratureGrid | None = None) -> float:
    """max over grid nodes of |(Z1^t conj(Psi^1), Z1^t conj(Psi^2))|.

    The pointwise Euclidean norm of the pair keeps the residual invariant
    under constant unitary maps of the target.
    """
    grid = state.grid if grid is None else grid
    sp = PackedSpace(state.N)
    phi = _phi_values(phi_t, grid)
    check_deformation(phi)
    psi1, psi2, _ = state.packed()
    return _cr_residual_values(sp, grid, (psi1, psi2), phi)


def radial_stats(state: EmbeddingState) -> tuple[float, float]:
    """(min, max) of |Psi| over the grid."""
    p1, p2, _ = state.values()
    r = np.sqrt(np.abs(p1) ** 2 + np.abs(p2) ** 2)
    return float(r.min()), float(r.max())


def injectivity_proxy(state: EmbeddingState, n_points: int = 400, seed: int = 0) -> float:
    """min over random point pairs of |Psi(x) - Psi(y)| / |x - y| (chordal distance)."""
    from .harmonics import evaluate_zw
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n_points, 4))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    z = pts[:, 0] + 1j * pts[:, 1]
    w = pts[:, 2] + 1j * pts[:, 3]
    P1 = np.array([complex(evaluate_zw(state.Psi1, a, b)) for a, b in zip(z, w)])
    P2 = np.array([complex(evaluate_zw(state.Psi2, a, b)) for a, b in zip(z, w)])
    src = np.stack([z, w], axis=1)
    img = np.stack([P1, P2], axis=1)
    i, j = np.triu_indices(n_points, 1)
    d_src = np.linalg.norm(src[i] - src[j], axis=1)
    d_img = np.linalg.norm(img[i] - img[j], axis=1)
    return float(np.min(d_img / d_src))


# ---------------------------------------------------------------------------
# Sources of (f_t, phi_t)
# ---------------------------------------------------------------------------

class _SeriesSource:
    """Horner evaluation of a TangencySeries in packed coordinates."""

    def __init__(self, series, grid):
        self.grid = grid
        f = [c.to_float() for c in series.f_coeffs]
        p = [c.to_float() for c in series.phi_coeffs]
        self.fsp = PackedSpace(max(max(c.degree() for c in f), 0))
        self.psp = PackedSpace(max(max(c.degree() for c in p), 0))
        self.f = [self.fsp.from_function(c) for c in f]
        self.p = [self.psp.from_function(c) for c in p]

    def f_vec(self, t):
        acc = self.fsp.zeros()
        for c in reversed(self.f):
            acc = acc * t + c
        return acc

    def phi_vec(self, t):
        acc = self.psp.zeros()
        for c in reversed(self.p):
            acc = acc * t + c
        return acc * t

    def at(self, t):
        return self.fsp, self.f_vec(t), self.psp.to_grid(self.phi_vec(t), self.grid)


class _TrajectorySource:
    def __init__(self, traj, grid):
        self.traj = traj
        self.grid = grid
        deg_f = max(max(f.degree() for f in traj.f_samples), 0)
        self.fsp = PackedSpace(deg_f)
        deg_p = max(max(p.degree() for p in traj.phi_samples), 0)
        self.psp = PackedSpace(deg_p)

    def at(self, t):
        f, phi = self.traj.sample(t)
        return (self.fsp, self.fsp.from_function(f.to_float()),
                self.psp.to_grid(self.psp.from_function(phi.to_float()), self.grid))


def _make_source(source, grid):
    from .tangency import TangencySeries, Trajectory
    if isinstance(source, TangencySeries):
        return _SeriesSource(source, grid)
    if isinstance(source, Trajectory):
        return _TrajectorySource(source, grid)
    raise TypeError(f"unsupported source type {type(source).__name__}")


def _potential(sp, f_vec, convention):
    if convention == "transport":
        return 2.0 * sp.conj(f_vec)
    if convention == "literal":
        return f_vec
    raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")


def _sign_check(f_grid_re, sign, margin, t):
    m = float(np.min(np.abs(f_grid_re)))
    signs = np.unique(np.sign(f_grid_re))
    if len(signs) != 1 or signs[0] == 0 or (sign and signs[0] != sign) or m <= margin:
        raise SignLost(f"Re f_t loses its strict sign at t = {t:.6g} (min |Re f| = {m:.3e})")
    return m


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integrate(source, t_end: float, dt: float = 1e-3, N: int = 12,
              grid: QuadratureGrid | None = None, convention: str = "transport",
              sample_every: int = 1, require_certificate: bool = True,
              adaptive: bool = False, growth_limit: float = 10.0,
              max_halvings: int = 4) -> list:
    """Integrate the transport system from the identity embedding.

    ``source`` is a TangencySeries or a Trajectory supplying f_t and phi(t).
    Re f_t is checked for a strict sign at every stage (``SignLost``).
    With ``adaptive`` a step whose CR residual grows by more than
    ``growth_limit`` (relative to the previous step plus the residual
    tolerance) is redone as two half steps, up to ``max_halvings`` times.
    Returns the recorded EmbeddingStates; each carries ``info`` with the
    CR residual, min |Re f_t|, the L2 norm of gamma and radial stats.
    """
    from .tangency import TangencySeries
    if t_end < 0 or t_end > 1:
        raise StepRejected(f"t_end must lie in [0, 1], got {t_end}")
    if not (dt > 0 and math.isfinite(dt)):
        raise StepRejected(f"dt must be positive and finite, got {dt}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise StepRejected(f"t_end = {t_end} is not a multiple of dt = {dt}")
    sign = 0
    if isinstance(source, TangencySeries) and require_certificate:
        cert = source.certificate
        if not cert or not cert.get("strict_sign"):
            raise SignLost("source series carries no strict-sign certificate for Re f_t")
        sign = int(cert.get("sign", 0))
    grid = default_grid(N) if grid is None else grid
    _check_grid(grid, N)
    sp = PackedSpace(N)
    src = _make_source(source, grid)
    margin = config.get().sign_margin
    tol = config.get().residual

    def data(t):
        fsp, fv, phi = src.at(t)
        re = np.real(fsp.to_grid(fv, grid))
        m = _sign_check(re, sign, margin, t)
        check_deformation(phi)
        return _Field.from_packed(fsp, _potential(fsp, fv, convention), grid), phi, m

    state = EmbeddingState.identity(N, grid)
    y = list(state.packed())
    d0 = data(0.0)
    states = []

    def record(t, y, d, res, halvings=0):
        st = EmbeddingState.from_packed(t, *y, grid, N)
        rmin, rmax = radial_stats(st)
        st.info = {"cr_residual": res, "min_abs_re_f": d[2],
                   "gamma_l2": math.sqrt(sp.norm2_of(y[2])),
                   "radius_min": rmin, "radius_max": rmax, "halvings": halvings}
        states.append(st)

    res_prev = _cr_residual_values(sp, grid, y[:2], d0[1])
    record(0.0, y, d0, res_prev)
    t0 = _time.perf_counter()
    for n in range(1, n_steps + 1):
        t = (n - 1) * dt
        halvings, sub = 0, 1
        while True:
            h = dt / sub
            y_try = y
            d_start = d0
            for j in range(sub):
                ts = t + j * h
                dm = data(ts + h / 2)
                d_end = data(ts + h)
                y_try = _rk4(sp, grid, y_try, h, d_start[:2], dm[:2], d_end[:2])
                d_start = d_end
            res = _cr_residual_values(sp, grid, y_try[:2], d_end[1])
            if (not adaptive or halvings >= max_halvings
                    or res <= growth_limit * res_prev + tol):
                break
            halvings += 1
            sub *= 2
        y, d0, res_prev = y_try, d_end, res
        if not all(np.all(np.isfinite(v)) for v in y):
            raise StepRejected(f"non-finite state at step {n}")
        if n % sample_every == 0 or n == n_steps:
            record(n * dt, y, d_end, res, halvings)
    if states:
        states[-1].info["wall_time"] = _time.perf_counter() - t0
    return states


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ["t", "cr_residual", "min_abs_re_f", "gamma_l2", "radius_min", "radius_max"]


def trajectory_csv(states) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(TRAJECTORY_COLUMNS)
    for st in states:
        w.writerow([repr(float(st.t))] + [repr(float(st.info.get(k, float("nan"))))
                                          for k in TRAJECTORY_COLUMNS[1:]])
    return buf.getvalue()


def trajectory_json(states) -> dict:
    return {"kind": "embedding_trajectory", "states": [s.to_json() for s in states]}


def trajectory_from_json(data: dict) -> list:
    return [EmbeddingState.from_json(d) for d in data["states"]]


__all__ = [
    "KAPPA0", "kappa0", "EmbeddingState", "velocity", "step", "cr_residual", "integrate",
    "radial_stats", "injectivity_proxy", "trajectory_csv", "trajectory_json",
    "trajectory_from_json", "default_grid",
]
