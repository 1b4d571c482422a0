"""The acceptance suite: eight end-to-end checks with pass/fail results.

Each ``criterion_*`` function runs one check at its stated tolerance and
returns a :class:`CriterionResult`.  ``tests/test_acceptance.py`` and the
``verify`` CLI subcommand both call :func:`run_all`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import flint
import numpy as np

from .harmonics import (
    Polynomial,
    QuadratureGrid,
    SphereFunction,
    basis,
    harmonic_decompose,
    random_function,
)
from .operators import apply_Z1, fs_norm, project, sublaplacian_eigencheck
from .scalars import GaussQ, fmpq
from .slice import cone_report, slice_decompose


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number}. {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(number, name):
    def wrap(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            passed, summary, details = fn(*args, **kw)
            return CriterionResult(number, name, bool(passed), summary, details,
                                   time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

D0_BLOCKS = [(p, q) for p in range(7) for q in range(2, 7) if p + q <= 6]
BE_BLOCKS = [(p, q) for p in range(7) for q in range(7) if p + q <= 6 and q >= p + 4]


def d0_fixtures(n=20, seed=20240601, max_blocks=3):
    """Seeded random exact phidot in D_0 supported in p + q <= 6."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_blocks + 1))
        idx = rng.choice(len(D0_BLOCKS), size=k, replace=False)
        out.append(random_function(rng, [D0_BLOCKS[i] for i in sorted(idx)], weight=2))
    return out


def be_fixtures(n=20, seed=20240602, max_blocks=2):
    """Seeded random exact phidot in the Burns-Epstein cone, p + q <= 6."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_blocks + 1))
        idx = rng.choice(len(BE_BLOCKS), size=k, replace=False)
        out.append(random_function(rng, [BE_BLOCKS[i] for i in sorted(idx)], weight=2))
    return out


def slice_fixtures(n=50, seed=20240603, max_degree=10, max_blocks=6):
    rng = np.random.default_rng(seed)
    blocks = [(p, q) for p in range(max_degree + 1) for q in range(max_degree + 1)
              if p + q <= max_degree]
    out = []
    for _ in range(n):
        k = int(rng.integers(1, max_blocks + 1))
        idx = rng.choice(len(blocks), size=k, replace=False)
        out.append(random_function(rng, [blocks[i] for i in sorted(idx)], weight=2,
                                   truncation=max_degree))
    return out


def be_benchmark(eps=fmpq(1, 100)) -> SphereFunction:
    """eps times the first canonical basis element of H_{0,4}."""
    return SphereFunction.basis_element(0, 4, 0, GaussQ(eps), weight=2)


# ---------------------------------------------------------------------------
# 1. Spectral identities
# ---------------------------------------------------------------------------

def _block_matrix(polys, p, q):
    """Coordinates of harmonic polynomials in block (p, q) as an fmpq_mat (real, imag stacked)."""
    n = p + q + 1
    re = flint.fmpq_mat(n, len(polys))
    im = flint.fmpq_mat(n, len(polys))
    for j, P in enumerate(polys):
        u = harmonic_decompose(P)
        if any(k != (p, q) for k in u.blocks):
            raise AssertionError(f"image left block ({p},{q}): {sorted(u.blocks)}")
        for i, x in enumerate(u.block(p, q)):
            re[i, j] = x.re
            im[i, j] = x.im
    return re, im


def _rank(re, im):
    rows, cols = re.nrows(), re.ncols()
    M = flint.fmpq_mat(2 * rows, 2 * cols)
    for i in range(rows):
        for j in range(cols):
            M[i, j] = re[i, j]
            M[i, cols + j] = -im[i, j]
            M[rows + i, j] = im[i, j]
            M[rows + i, cols + j] = re[i, j]
    return M.rank() // 2


@_timed(1, "spectral identities (exact, p+q <= 12)")
def criterion_1(max_degree: int = 12):
    """dim, T eigenvalue, Z1 bijectivity, sublaplacian, kernel/image of (Z1)^2.

    Every identity is checked by polynomial differentiation of the basis
    polynomials followed by harmonic decomposition, and cross-checked against
    the block-shift operators.
    """
    failures = []
    for d in range(max_degree + 1):
        for p in range(d + 1):
            q = d - p
            B = basis(p, q)
            if len(B) != p + q + 1:
                failures.append(("dim", p, q))
                continue
            for e in B:
                if not e.laplacian().is_zero() or e.bidegrees() != {(p, q)}:
                    failures.append(("harmonic", p, q))
            ident = _block_matrix(B, p, q)
            if _rank(*ident) != p + q + 1:
                failures.append(("independent", p, q))
            # T eigenvalue
            for a, e in enumerate(B):
                if e.T() != e * GaussQ(0, p - q):
                    failures.append(("T", p, q, a))
            # Z1 bijective for p >= 1, zero for p = 0
            z1 = [e.Z1() for e in B]
            if p == 0:
                if any(not P.is_zero() for P in z1):
                    failures.append(("Z1 on p=0", p, q))
            else:
                if _rank(*_block_matrix(z1, p - 1, q + 1)) != p + q + 1:
                    failures.append(("Z1 bijective", p, q))
                for a in range(p + q + 1):
                    u = SphereFunction.basis_element(p, q, a)
                    if apply_Z1(u) != harmonic_decompose(z1[a]):
                        failures.append(("Z1 shift", p, q, a))
            # sublaplacian
            lam = sublaplacian_eigencheck(p, q)
            for a, e in enumerate(B):
                L = -(e.Z1bar().Z1() + e.Z1().Z1bar())
                if harmonic_decompose(L) != harmonic_decompose(e) * lam:
                    failures.append(("sublaplacian", p, q, a))
            # kernel of (Z1)^2 on H_{p,q}: nonzero exactly for p in {0, 1}
            z2 = [P.Z1() for P in z1] if p >= 1 else []
            if p >= 2:
                r = _rank(*_block_matrix(z2, p - 2, q + 2))
                if r != p + q + 1:
                    failures.append(("Z1^2 injective", p, q))
            elif p == 1 and any(not P.is_zero() for P in z2):
                failures.append(("Z1^2 kernel", p, q))
            # image of (Z1)^2 in H_{p,q}: all of it iff q >= 2, else zero
            if q >= 2:
                src = [P.Z1().Z1() for P in basis(p + 2, q - 2)]
                if _rank(*_block_matrix(src, p, q)) != p + q + 1:
                    failures.append(("Z1^2 onto", p, q))
    n_blocks = (max_degree + 1) * (max_degree + 2) // 2
    return (not failures, f"{n_blocks} blocks checked, {len(failures)} failures",
            {"failures": failures[:20], "blocks": n_blocks})


# ---------------------------------------------------------------------------
# 2. Formal series residual
# ---------------------------------------------------------------------------

@_timed(2, "tangency residual of formal series (exact, K = 5)")
def criterion_2(n: int = 20, K: int = 5):
    from .tangency import formal_series, polynomial_residual_series
    bad = []
    for i, phidot in enumerate(d0_fixtures(n)):
        series = formal_series(phidot, K)
        res = polynomial_residual_series(series, K)
        nonzero = [k for k, r in enumerate(res) if not r.is_zero()]
        in_kernel = [k for k, f in enumerate(series.f_coeffs)
                     if not project(f, "P_IN_01").is_zero()]
        if nonzero or in_kernel:
            bad.append({"fixture": i, "residual_orders": nonzero, "p01_orders": in_kernel})
    return (not bad, f"{n} fixtures, residual exactly 0 through t^{K}: {n - len(bad)}/{n}",
            {"failures": bad})


# ---------------------------------------------------------------------------
# 3. Burns-Epstein invariance
# ---------------------------------------------------------------------------

@_timed(3, "Burns-Epstein invariance (exact)")
def criterion_3(n: int = 20, K: int = 5, lam=-1):
    from .tangency import be_series
    bad = []
    for i, phidot in enumerate(be_fixtures(n)):
        series = be_series(phidot, lam, K)
        phi_bad = [k + 1 for k, ph in enumerate(series.phi_coeffs) if k >= 1 and not ph.is_zero()]
        supp_bad = [k for k, f in enumerate(series.f_tilde_coeffs)
                    if any(q < p for (p, q) in f.support())]
        if phi_bad or supp_bad:
            bad.append({"fixture": i, "phi_orders": phi_bad, "support_orders": supp_bad})
    return (not bad, f"{n} fixtures, phi^(k>=2) = 0 and supp f~ in q >= p: {n - len(bad)}/{n}",
            {"failures": bad})


# ---------------------------------------------------------------------------
# 4. Norm growth
# ---------------------------------------------------------------------------

@_timed(4, "norm growth bound (s = 10, k <= 10)")
def criterion_4(n: int = 20, K: int = 10, s: int = 10):
    """||f^(k)||_s <= (C_s ||phidot||_s)^(k+1) for the lambda = 0 series."""
    from .operators import solver_ratio2
    from .tangency import be_series, radius_estimate
    bad = []
    worst = 0.0
    for i, phidot in enumerate(be_fixtures(n)):
        series = be_series(phidot, 0, K, s=s)
        est = radius_estimate(phidot, s)
        C, cs, nrm = est["C"], est["C_s"], est["phidot_norm_s"]
        # the C used must dominate every solver ratio met by the recursion
        ratios = [math.sqrt(float(solver_ratio2(p, q, s)))
                  for f in series.f_coeffs for (p, q) in {(p - 2, q + 2) for (p, q) in f.blocks}
                  if q >= 2]
        c_ok = all(r <= C for r in ratios) and cs * cs > C * (5 * cs + 1)
        for k, f in enumerate(series.f_coeffs):
            lhs = fs_norm(f, s)
            rhs = (cs * nrm) ** (k + 1)
            worst = max(worst, lhs / rhs)
            if lhs > rhs:
                bad.append({"fixture": i, "k": k, "norm": lhs, "bound": rhs, "C_ok": c_ok})
        if not c_ok:
            bad.append({"fixture": i, "C_inequality": False})
    return (not bad, f"{n} fixtures, max ||f^(k)||_s / bound = {worst:.3e}",
            {"failures": bad, "worst_ratio": worst})


# ---------------------------------------------------------------------------
# 5. Strict sign
# ---------------------------------------------------------------------------

@_timed(5, "strict-sign certificate (lambda = -1, R > 2)")
def criterion_5(n: int = 20, K: int = 6, s: int = 10, R: float = 2.5):
    from .tangency import be_series, radius_estimate
    bad = []
    mins = []
    for i, phidot in enumerate(be_fixtures(n)):
        est = radius_estimate(phidot, s, lam=-1, R=R)
        # exact rescaling to ||phidot||_s <= eps
        ratio = est["epsilon"] / est["phidot_norm_s"]
        c = fmpq(int(ratio * 2 ** 60), 2 ** 60)
        scaled = phidot.scale(GaussQ(c))
        est2 = radius_estimate(scaled, s, lam=-1, R=R)
        series = be_series(scaled, -1, K, s=s, R=R)
        cert = series.certificate
        mins.append(cert["min_abs_re"])
        if not (cert["strict_sign"] and cert["min_abs_re"] > 0 and est2["R_s"] > 2):
            bad.append({"fixture": i, "certificate": cert, "R_s": est2["R_s"]})
    return (not bad, f"{n} fixtures, min |Re f_t| over t in [0,1] = {min(mins):.6f}",
            {"failures": bad, "min_abs_re": min(mins)})


# ---------------------------------------------------------------------------
# 6. Cross-solver agreement
# ---------------------------------------------------------------------------

def psi_slope(phidot, lam=-1.0, N=12, dt=1e-3, T=0.1):
    """Least-squares slope of log ||psi(t)|| against log t on [dt, T]."""
    from .tangency import evolve_general
    traj = evolve_general(phidot, lam, T, dt, N)
    ts, ns = [], []
    for t, ph in zip(traj.times, traj.phi_samples):
        if t <= 0:
            continue
        ts.append(t)
        ns.append(project(ph, "Q_IN_01").norm())
    lt, ln = np.log(ts), np.log(ns)
    slope = float(np.polyfit(lt, ln, 1)[0])
    return slope, ts, ns


@_timed(6, "cross-solver agreement (N = 12, dt = 1e-3)")
def criterion_6(T_end: float = 1.0, N: int = 12, dt: float = 1e-3, lam=-1):
    from .tangency import be_series, evolve_general
    phidot = be_benchmark()
    traj = evolve_general(phidot, float(lam), T_end, dt, N, sample_every=int(round(0.25 / dt)))
    series = be_series(phidot, lam, 12, N)
    pd_f = phidot.to_float()
    phi_err = f_err = 0.0
    for t, f, ph in zip(traj.times, traj.f_samples, traj.phi_samples):
        phi_err = max(phi_err, ph.distance(pd_f.scale(t)))
        f_err = max(f_err, f.distance(series.f_at(float(t))))
    h22 = SphereFunction.basis_element(2, 2, 2, GaussQ(fmpq(1, 100)), weight=2)
    slope, _, _ = psi_slope(h22, float(lam), N, dt)
    ok = phi_err <= 1e-8 and f_err <= 1e-6 and slope >= 1.9
    return (ok, f"||phi - t phidot|| = {phi_err:.2e}, ||f diff|| = {f_err:.2e}, "
                f"psi slope on H_2,2 = {slope:.3f}",
            {"phi_err": phi_err, "f_err": f_err, "slope": slope})


# ---------------------------------------------------------------------------
# 7. Embedding certification
# ---------------------------------------------------------------------------

def _eval_poly(P: Polynomial, z, w):
    zb, wb = np.conj(z), np.conj(w)
    out = np.zeros(np.shape(z), dtype=complex)
    for (a, b, c, d), v in P.terms.items():
        out = out + complex(v) * z ** a * zb ** b * w ** c * wb ** d
    return out


def published_velocity(F: SphereFunction, grid: QuadratureGrid):
    """Re(1/2 F (JT + iT) - (nabla^1 F) Z1) at the grid nodes, as C^2 components.

    Vectors are handled as real vectors of R^4 = C^2: T is the velocity of
    (z, w) -> (e^{is} z, e^{is} w), J is multiplication by i, and a complex
    multiple c of the (1,0) field Z1 = conj(w) d/dz - conj(z) d/dw has real
    part with C^2 components (c conj(w) / 2, -c conj(z) / 2).
    nabla^1 F = Z1bar F is taken by polynomial differentiation.
    """
    P = F.to_polynomial()
    z, w = grid.z, grid.w
    Fv = _eval_poly(P, z, w)
    dF = _eval_poly(P.Z1bar(), z, w)
    T = (1j * z, 1j * w)
    JT = (1j * T[0], 1j * T[1])
    # Re(c V) for V = JT + iT with JT, T real: Re(c) JT - Im(c) T
    c = 0.5 * Fv
    first = [c.real * JT[j] - c.imag * T[j] for j in range(2)]
    z1 = (np.conj(w), -np.conj(z))
    second = [-0.5 * dF * z1[j] for j in range(2)]
    return first[0] + second[0], first[1] + second[1]


def t0_velocity_error(series, N=12, convention="transport"):
    """max |step velocity - published field| at t = 0, on the flow grid."""
    from . import flow
    state = flow.EmbeddingState.identity(N)
    f0 = series.f_at(0) if series.f_coeffs[0].exact else series.f_coeffs[0]
    F = f0.conj().scale(2) if convention == "transport" else f0
    v1, v2, _ = flow.velocity(state, F, None)
    from .harmonics import evaluate_grid
    o1, o2 = published_velocity(F, state.grid)
    return max(float(np.max(np.abs(evaluate_grid(v1, state.grid) - o1))),
               float(np.max(np.abs(evaluate_grid(v2, state.grid) - o2))))


@_timed(7, "embedding certification (BE benchmark)")
def criterion_7(t_end: float = 1.0, N: int = 12, dt: float = 1e-3, lam=-1):
    from . import flow
    from .tangency import be_series
    phidot = be_benchmark()
    series = be_series(phidot, lam, 12, 4 * (N + 4))
    v_err = t0_velocity_error(series, N)
    base = flow.integrate(series, t_end, dt, N, sample_every=int(round(0.1 / dt)))
    fine = flow.integrate(series, t_end, dt / 2, N + 4, sample_every=int(round(0.1 / dt * 2)))
    r_base = base[-1].info["cr_residual"]
    r_fine = fine[-1].info["cr_residual"]
    ratio = r_base / r_fine if r_fine > 0 else math.inf
    # first recorded time at which the base residual exceeds the target
    over = [s.t for s in base if s.info["cr_residual"] > 1e-6]
    literal = flow.integrate(series, 0.1, dt, N, convention="literal", sample_every=100)
    ok = v_err <= 1e-10 and r_base <= 1e-6 and ratio >= 4
    return (ok, f"t=0 velocity err = {v_err:.2e}, final cr_residual = {r_base:.3e} "
                f"(target 1e-6), refinement ratio = {ratio:.1f}",
            {"velocity_error": v_err, "cr_residual": r_base, "cr_residual_refined": r_fine,
             "refinement_ratio": ratio, "t_end": t_end,
             "first_sample_over_target": over[0] if over else None,
             "residual_profile": [(s.t, s.info["cr_residual"]) for s in base],
             "literal_potential_residual_t0.1": literal[-1].info["cr_residual"]})


# ---------------------------------------------------------------------------
# 8. Slice round trip
# ---------------------------------------------------------------------------

@_timed(8, "slice round trip (exact, p+q <= 10)")
def criterion_8(n: int = 50):
    bad = []
    for i, phidot in enumerate(slice_fixtures(n)):
        d = slice_decompose(phidot)
        problems = []
        if d.reconstruct() != phidot:
            problems.append("reconstruct")
        if d.g.conj() != d.g:
            problems.append("g real")
        if not cone_report(d.be_prime)["BE_prime"]:
            problems.append("be_prime cone")
        if not all(q <= 1 for (p, q) in d.perp.blocks):
            problems.append("perp support")
        for part, name in ((d.be_prime, "be_prime"), (d.pi, "pi"), (d.perp, "perp")):
            r = slice_decompose(part)
            comps = {"be_prime": r.be_prime, "pi": r.pi, "perp": r.perp}
            for key, val in comps.items():
                expect = part if key == name else SphereFunction.zero(2, exact=True)
                if val != expect:
                    problems.append(f"idempotence {name}->{key}")
        if problems:
            bad.append({"fixture": i, "problems": problems})
    return (not bad, f"{n} fixtures, exact round trip and idempotence: {n - len(bad)}/{n}",
            {"failures": bad})


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4,
            criterion_5, criterion_6, criterion_7, criterion_8]


def run_all(selected=None, echo=print):
    results = []
    for k, fn in enumerate(CRITERIA, start=1):
        if selected and k not in selected:
            continue
        res = fn()
        if echo:
            echo(res.line())
        results.append(res)
    return results
