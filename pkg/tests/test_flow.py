"""Embedding transport flow: transverse curvature, stepping, CR residual, integration."""

import json
import math

import numpy as np
import pytest
import sympy as sp

from crsphere import flow
from crsphere.acceptance import be_benchmark, published_velocity, t0_velocity_error
from crsphere.errors import DeformationTooLarge, GridTooCoarse, SignLost, StepRejected
from crsphere.harmonics import (
    QuadratureGrid,
    SphereFunction,
    evaluate_grid,
    random_function,
)
from crsphere.scalars import GaussQ, fmpq
from crsphere.tangency import be_series, formal_series


# -- transverse curvature oracle ---------------------------------------------

def _transverse_curvature(rho, point):
    """Solve xi rho = 1, xi -| d(d^c rho) = i kappa dbar rho for a (1,0) field xi.

    With d^c = (i/2)(d - dbar), d(d^c rho) = -i sum rho_{j kbar} dz_j ^ dzbar_k,
    so the contraction condition reads -sum_j rho_{j kbar} xi_j = kappa rho_{kbar}.
    """
    z, w, zb, wb = sp.symbols("z w zb wb")
    hol, anti = (z, w), (zb, wb)
    x1, x2, kappa = sp.symbols("x1 x2 kappa")
    xi = (x1, x2)
    R = rho(z, w, zb, wb)
    eqs = [sum(xi[j] * sp.diff(R, hol[j]) for j in range(2)) - 1]
    for k in range(2):
        eqs.append(-sum(sp.diff(R, hol[j], anti[k]) * xi[j] for j in range(2))
                   - kappa * sp.diff(R, anti[k]))
    vals = {z: point[0], w: point[1], zb: sp.conjugate(point[0]), wb: sp.conjugate(point[1])}
    sol = sp.solve([e.subs(vals) for e in eqs], [x1, x2, kappa], dict=True)[0]
    return sp.nsimplify(sol[kappa]), (sol[x1], sol[x2])


_inward = lambda z, w, zb, wb: 1 - z * zb - w * wb
_outward = lambda z, w, zb, wb: z * zb + w * wb - 1


def _sphere_points():
    rng = np.random.default_rng(0)
    pts = [(sp.Integer(1), sp.Integer(0))]
    for _ in range(5):
        v = rng.integers(-4, 5, size=4)
        while not v.any():
            v = rng.integers(-4, 5, size=4)
        n = sp.sqrt(sum(int(x) ** 2 for x in v))
        pts.append(((int(v[0]) + sp.I * int(v[1])) / n, (int(v[2]) + sp.I * int(v[3])) / n))
    return pts


def test_kappa0_matches_symbolic_oracle():
    k, xi = _transverse_curvature(_inward, (1, 0))
    assert flow.kappa0() == float(k) == 1.0
    # xi = (JT + iT)/2 for T the velocity of (z, w) -> e^{is}(z, w): xi = -(z, w)
    assert xi == (-1, 0)


def test_kappa0_constant_on_sphere():
    for pt in _sphere_points():
        k, xi = _transverse_curvature(_inward, pt)
        assert k == 1
        assert sp.simplify(xi[0] + pt[0]) == 0 and sp.simplify(xi[1] + pt[1]) == 0


def test_kappa_sign_flips_with_orientation():
    """The opposite defining function has kappa = -1 and Reeb field -T."""
    for pt in _sphere_points()[:3]:
        assert _transverse_curvature(_outward, pt)[0] == -1


# -- stepping -----------------------------------------------------------------

def test_zero_potential_leaves_state_unchanged():
    s0 = flow.EmbeddingState.identity(6)
    zero = SphereFunction.zero(exact=False)
    s1 = flow.step(s0, zero, None, 0.1)
    assert s1.Psi1.distance(s0.Psi1) == 0 and s1.Psi2.distance(s0.Psi2) == 0
    assert s1.gamma.norm() == 0 and s1.t == pytest.approx(0.1)


@pytest.mark.parametrize("c", [0.5, -1.0])
def test_round_sphere_radial_solution(c):
    """F = c, phi = 0: dPsi/dt = (ic/2) T Psi, so |Psi| = exp(-c t / 2)."""
    state = flow.EmbeddingState.identity(4)
    F = SphereFunction.constant(c, exact=False)
    dt, n = 0.05, 10
    for _ in range(n):
        state = flow.step(state, F, None, dt)
    rmin, rmax = flow.radial_stats(state)
    r = math.exp(-c * dt * n / 2)
    assert rmin == pytest.approx(r, rel=1e-9) and rmax == pytest.approx(r, rel=1e-9)
    assert flow.cr_residual(state) < 1e-13


def test_t0_velocity_matches_published_field_on_benchmark():
    series = be_series(be_benchmark(), fmpq(-1), 4, 16)
    assert t0_velocity_error(series, N=8) <= 1e-10


def test_t0_velocity_matches_published_field_random_potential():
    rng = np.random.default_rng(1)
    F = random_function(rng, [(0, 0), (2, 2), (1, 3), (3, 1), (2, 0)], exact=False)
    state = flow.EmbeddingState.identity(6)
    v1, v2, _ = flow.velocity(state, F)
    o1, o2 = published_velocity(F, state.grid)
    assert np.max(np.abs(evaluate_grid(v1, state.grid) - o1)) < 1e-12
    assert np.max(np.abs(evaluate_grid(v2, state.grid) - o2)) < 1e-12


def test_step_rejects_large_deformation_and_coarse_grid():
    s0 = flow.EmbeddingState.identity(4)
    F = SphereFunction.constant(1.0, exact=False)
    big = SphereFunction.constant(0.9999, weight=2, exact=False)
    with pytest.raises(DeformationTooLarge):
        flow.step(s0, F, big, 0.01)
    coarse = flow.EmbeddingState.identity(6, QuadratureGrid.for_degree(8))
    with pytest.raises(GridTooCoarse):
        flow.step(coarse, F, None, 0.01)
    with pytest.raises(StepRejected):
        flow.step(s0, F, None, -0.1)


# -- CR residual --------------------------------------------------------------

def test_identity_residual_zero_without_deformation():
    assert flow.cr_residual(flow.EmbeddingState.identity(5)) == 0.0


def test_identity_residual_closed_form():
    rng = np.random.default_rng(2)
    phi = random_function(rng, [(0, 4), (2, 3)], weight=2, exact=False)
    phi = phi.scale(0.3 / phi.norm())
    state = flow.EmbeddingState.identity(6)
    grid = state.grid
    ph = evaluate_grid(phi, grid)
    # conj(Z1 z) = w and conj(Z1 w) = -z on the identity map, and |z|^2 + |w|^2 = 1
    pair = np.sqrt(np.abs(ph * grid.w) ** 2 + np.abs(ph * grid.z) ** 2)
    expected = np.max(pair / np.sqrt(1 - np.abs(ph) ** 2))
    assert expected == pytest.approx(np.max(np.abs(ph) / np.sqrt(1 - np.abs(ph) ** 2)))
    assert flow.cr_residual(state, phi) == pytest.approx(float(expected), rel=1e-12)


def test_residual_invariant_under_unitary_rotation():
    series = be_series(be_benchmark(), fmpq(-1), 4, 16)
    states = flow.integrate(series, 0.05, 0.01, 6)
    st = states[-1]
    phi = series.phi_at(0.05).to_float()
    a, b = np.exp(0.3j) * np.cos(0.7), np.exp(-1.1j) * np.sin(0.7)
    U = np.array([[a, -np.conj(b)], [b, np.conj(a)]])
    rot = flow.EmbeddingState(st.t, st.Psi1.scale(U[0, 0]) + st.Psi2.scale(U[0, 1]),
                              st.Psi1.scale(U[1, 0]) + st.Psi2.scale(U[1, 1]),
                              st.gamma, st.grid, st.N)
    assert flow.cr_residual(rot, phi) == pytest.approx(flow.cr_residual(st, phi), rel=1e-9,
                                                       abs=1e-15)


# -- integration ----------------------------------------------------------------

def _round_series(lam):
    return be_series(SphereFunction.zero(weight=2), fmpq(lam), 3, 4)


@pytest.mark.parametrize("lam", [-1, 1])
def test_integrate_round_sphere_radius(lam):
    states = flow.integrate(_round_series(lam), 0.5, 0.05, 4)
    radii = [s.info["radius_max"] for s in states]
    # transport potential F = 2 conj(f) = 2 lam gives r(t) = exp(-lam t)
    assert radii[-1] == pytest.approx(math.exp(-lam * 0.5), rel=1e-6)
    steps = np.diff(radii)
    assert np.all(steps > 0) if lam < 0 else np.all(steps < 0)
    assert all(s.info["radius_min"] == pytest.approx(s.info["radius_max"], rel=1e-12)
               for s in states)


def test_integrate_benchmark_short_horizon():
    series = be_series(be_benchmark(), fmpq(-1), 8, 48)
    states = flow.integrate(series, 0.1, 0.01, 12)
    assert states[0].t == 0 and states[0].gamma.norm() == 0
    final = states[-1]
    assert final.info["cr_residual"] < 1e-6
    assert final.gamma.distance(final.gamma.conj()) < 1e-14
    assert "wall_time" in final.info
    assert flow.injectivity_proxy(final, n_points=200) > 0.5


def test_refinement_reduces_residual():
    series = be_series(be_benchmark(), fmpq(-1), 8, 40)
    coarse = flow.integrate(series, 0.2, 0.01, 6)[-1].info["cr_residual"]
    fine = flow.integrate(series, 0.2, 0.005, 10)[-1].info["cr_residual"]
    assert coarse / fine >= 4


def test_integrate_t_end_zero_gives_identity():
    states = flow.integrate(_round_series(-1), 0.0, 0.01, 5)
    assert len(states) == 1 and states[0].info["cr_residual"] == 0.0
    ident = flow.EmbeddingState.identity(5)
    assert states[0].Psi1.distance(ident.Psi1) == 0


def test_integrate_requires_certificate():
    phidot = SphereFunction.basis_element(0, 4, 0, weight=2).scale(GaussQ(fmpq(1, 100)))
    with pytest.raises(SignLost):
        flow.integrate(formal_series(phidot, 2), 0.1, 0.01, 4)


def test_integrate_detects_sign_change():
    series = _round_series(-1)
    series.certificate = {"strict_sign": True, "sign": 1, "min_abs_re": 1.0}
    with pytest.raises(SignLost):
        flow.integrate(series, 0.1, 0.01, 4)


def test_integrate_rejects_bad_times():
    with pytest.raises(StepRejected):
        flow.integrate(_round_series(-1), 1.5, 0.01, 4)
    with pytest.raises(StepRejected):
        flow.integrate(_round_series(-1), 0.015, 0.01, 4)


def test_trajectory_export_round_trip():
    states = flow.integrate(_round_series(-1), 0.1, 0.05, 4)
    data = json.loads(json.dumps(flow.trajectory_json(states)))
    back = flow.trajectory_from_json(data)
    assert [s.t for s in back] == [s.t for s in states]
    assert back[-1].Psi1.distance(states[-1].Psi1) == 0
    csv = flow.trajectory_csv(states).splitlines()
    assert csv[0].split(",") == flow.TRAJECTORY_COLUMNS and len(csv) == len(states) + 1


def test_literal_convention_available():
    series = be_series(be_benchmark(), fmpq(-1), 4, 16)
    lit = flow.integrate(series, 0.02, 0.01, 6, convention="literal")
    assert len(lit) == 3
    with pytest.raises(ValueError):
        flow.integrate(series, 0.02, 0.01, 6, convention="other")
