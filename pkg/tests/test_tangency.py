"""Tangency equation: L_phi, series solvers, residuals, radius estimate, parabolic solver."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings

from crsphere.errors import NotBurnsEpstein, NotInfinitesimallyEmbeddable
from crsphere.harmonics import QuadratureGrid, SphereFunction, random_function
from crsphere.operators import apply_nabla0, project
from crsphere.scalars import GaussQ, fmpq
from crsphere.tangency import (
    TangencySeries,
    Trajectory,
    apply_L,
    be_series,
    evolve_general,
    exponential_map,
    formal_series,
    radius_estimate,
    tangency_residual,
)

from conftest import exact_functions

D0 = lambda p, q: q >= 2
BE = lambda p, q: q >= p + 4


def small_float(u, size):
    u = u.to_float()
    return u.scale(size / u.norm())


# -- L_phi --------------------------------------------------------------------

@given(exact_functions(N=4))
def test_L_of_zero_phi(f):
    assert apply_L(SphereFunction.zero(weight=2), f).is_zero()


@given(exact_functions(N=5, weight=2))
def test_L_on_constant(phi):
    one = SphereFunction.constant(GaussQ(1))
    assert apply_L(phi, one) == apply_nabla0(phi).scale(GaussQ(0, -1))


@given(exact_functions(N=7, weight=2, pred=BE, max_blocks=2),
       exact_functions(N=7, weight=2, pred=BE, max_blocks=2))
def test_L_preserves_BE_cone(phi, g):
    from crsphere.operators import apply_Z1bar_squared
    f = apply_Z1bar_squared(g).with_weight(0)
    out = apply_L(phi, f)
    assert all(q >= p + 4 for (p, q) in out.blocks)


# -- residual forms -----------------------------------------------------------

def test_residual_trivial_case():
    zero = SphereFunction.zero(weight=2, exact=False)
    f = SphereFunction.constant(2.5, exact=False)
    res = tangency_residual((zero, f, zero), grid=QuadratureGrid.for_degree(4))
    assert np.max(np.abs(res)) == 0


@settings(max_examples=10)
@given(exact_functions(N=5, weight=2, pred=D0, max_blocks=2))
def test_formal_series_residual_exactly_zero(phidot):
    series = formal_series(phidot, K=3)
    for r in tangency_residual(series):
        assert r.is_zero()


def test_polynomial_and_pseudohermitian_forms_agree():
    rng = np.random.default_rng(11)
    phidot = small_float(random_function(rng, [(2, 2), (0, 4)], weight=2), 0.05)
    series = formal_series(phidot, K=4)
    grid = QuadratureGrid.for_degree(40)
    t = 0.3
    phi = series.phi_at(t, 5)
    f = series.f_at(t, 4)
    pd = series.phidot_at(t, 4)
    poly = tangency_residual((phi, f, pd), "POLYNOMIAL", grid=grid)
    ph = tangency_residual((phi, f, pd), "PSEUDOHERMITIAN", grid=grid)
    one = 1 - np.abs(np.asarray(_grid_values(phi, grid))) ** 2
    assert np.max(np.abs(poly - one * ph)) < 1e-12 * max(1.0, np.max(np.abs(poly)))


def _grid_values(u, grid):
    from crsphere.harmonics import evaluate_grid
    return evaluate_grid(u.to_float(), grid)


# -- formal series ------------------------------------------------------------

def test_formal_series_zero_input():
    s = formal_series(SphereFunction.zero(weight=2), K=4)
    assert all(c.is_zero() for c in s.f_coeffs + s.phi_coeffs)


@settings(max_examples=10)
@given(exact_functions(N=6, weight=2, pred=D0, max_blocks=3))
def test_formal_series_projection_invariants(phidot):
    s = formal_series(phidot, K=3)
    for f in s.f_coeffs:
        assert project(f, "P_IN_01").is_zero()
    for phi in s.phi_coeffs[1:]:
        assert project(phi, "Q_GE_2").is_zero()


@settings(max_examples=10)
@given(exact_functions(N=7, weight=2, pred=BE, max_blocks=2))
def test_formal_series_BE_is_linear_in_t(phidot):
    s = formal_series(phidot, K=4)
    assert all(phi.is_zero() for phi in s.phi_coeffs[1:])


def test_formal_series_H22_has_second_order_term():
    phidot = SphereFunction.basis_element(2, 2, 2, weight=2)
    s = formal_series(phidot, K=2)
    assert not s.phi_coeffs[1].is_zero()
    assert set(s.phi_coeffs[1].blocks) <= {(p, q) for p in range(8) for q in (0, 1)}


def test_formal_series_rejects_q01():
    phidot = random_function(np.random.default_rng(0), [(2, 2), (3, 0)], weight=2)
    with pytest.raises(NotInfinitesimallyEmbeddable) as info:
        formal_series(phidot, K=2)
    assert (3, 0) in [tuple(b) for b in info.value.blocks]


def test_formal_series_deterministic():
    phidot = random_function(np.random.default_rng(1), [(2, 2), (1, 3)], weight=2)
    a = json.dumps(formal_series(phidot, K=3).to_json(), sort_keys=True)
    b = json.dumps(formal_series(phidot, K=3).to_json(), sort_keys=True)
    assert a == b


# -- Burns-Epstein series -----------------------------------------------------

@settings(max_examples=8)
@given(exact_functions(N=7, weight=2, pred=BE, max_blocks=2))
def test_be_series_lambda_zero_equals_formal(phidot):
    a = be_series(phidot, 0, K=3)
    b = formal_series(phidot, K=3)
    assert all(x == y for x, y in zip(a.f_coeffs, b.f_coeffs))
    assert all(x == y for x, y in zip(a.phi_coeffs, b.phi_coeffs))


@settings(max_examples=8)
@given(exact_functions(N=7, weight=2, pred=BE, max_blocks=2))
def test_be_series_support(phidot):
    s = be_series(phidot, fmpq(-1), K=4)
    for f in s.f_tilde_coeffs:
        assert all(q >= p for (p, q) in f.blocks)
    assert all(phi.is_zero() for phi in s.phi_coeffs[1:])


def test_be_series_strict_sign_certificate():
    phidot = SphereFunction.basis_element(0, 4, 0, weight=2).scale(GaussQ(fmpq(1, 100)))
    s = be_series(phidot, fmpq(-1), K=6)
    cert = s.certificate
    assert cert["strict_sign"] and cert["sign"] == -1 and cert["min_abs_re"] > 0.9


def test_be_series_rejects_non_BE():
    with pytest.raises(NotBurnsEpstein):
        be_series(SphereFunction.basis_element(1, 4, 0, weight=2), -1, K=2)


def test_series_json_round_trip():
    phidot = SphereFunction.basis_element(0, 5, 1, weight=2)
    s = be_series(phidot, fmpq(-1), K=3)
    back = TangencySeries.from_json(json.loads(json.dumps(s.to_json())))
    assert back.to_json() == s.to_json()
    assert s.norms_csv().splitlines()[0].startswith("k,")


# -- radius estimate ----------------------------------------------------------

def test_radius_estimate_zero_input():
    assert radius_estimate(SphereFunction.zero(weight=2), s=10)["R_s"] == math.inf


def test_radius_estimate_scaling():
    phidot = SphereFunction.basis_element(0, 4, 2, weight=2)
    r1 = radius_estimate(phidot, s=4, N=8)
    r3 = radius_estimate(phidot.scale(GaussQ(3)), s=4, N=8)
    assert r3["R_s"] == pytest.approx(r1["R_s"] / 3, rel=1e-12)
    assert r1["inequality_ok"]
    assert r1["C_s"] ** 2 > r1["C"] * (5 * r1["C_s"] + 1)


@settings(max_examples=5)
@given(exact_functions(N=6, weight=2, pred=BE, max_blocks=1))
def test_norm_growth_bound(phidot):
    s_ord = 4
    series = be_series(phidot, 0, K=4, s=s_ord)
    est = radius_estimate(phidot, s=s_ord, N=12)
    from crsphere.operators import fs_norm
    base = est["C_s"] * fs_norm(phidot, s_ord)
    for k, f in enumerate(series.f_coeffs):
        assert fs_norm(f, s_ord) <= base ** (k + 1) * (1 + 1e-12)


# -- parabolic solver ---------------------------------------------------------

def test_evolve_BE_matches_series():
    phidot = SphereFunction.basis_element(0, 4, 1, weight=2).scale(GaussQ(fmpq(1, 100)))
    traj = evolve_general(phidot, -1.0, 0.2, dt=0.01, N=8, sample_every=10)
    series = be_series(phidot, fmpq(-1), K=10, N=8)
    for t, f, phi in zip(traj.times, traj.f_samples, traj.phi_samples):
        assert phi.distance(phidot.to_float().scale(t)) < 1e-12
        assert f.distance(series.f_at(t).to_float()) < 1e-9


def test_evolve_general_psi_is_second_order():
    phidot = SphereFunction.basis_element(2, 2, 2, weight=2).to_float()
    phidot = phidot.scale(0.01 / phidot.norm())
    traj = evolve_general(phidot, -1.0, 0.04, dt=0.002, N=8)
    ts = np.array(traj.times[1:])
    psi = np.array([project(p, "Q_IN_01").norm() for p in traj.phi_samples[1:]])
    slope = np.polyfit(np.log(ts), np.log(psi), 1)[0]
    assert slope > 1.9
    # order-2 coefficient agrees with the formal recursion
    series = formal_series(phidot, K=2, N=8)
    t = ts[4]
    psi_t = project(traj.phi_samples[5], "Q_IN_01")
    assert psi_t.scale(1 / t ** 2).distance(series.phi_coeffs[1]) < 0.05 * series.phi_coeffs[1].norm()


def test_evolve_general_f_in_image_of_Z1bar_squared():
    phidot = random_function(np.random.default_rng(2), [(2, 2), (1, 4)], weight=2, exact=False)
    phidot = phidot.scale(0.01 / phidot.norm())
    traj = evolve_general(phidot, -2.0, 0.05, dt=0.01, N=8)
    for f in traj.f_samples:
        rest = f - SphereFunction.constant(-2.0, exact=False)
        assert project(rest, "P_IN_01").norm() < 1e-12


def test_energy_decay_of_seeded_psi():
    zero = SphereFunction.zero(weight=2, exact=False)
    psi0 = random_function(np.random.default_rng(3), [(2, 0), (0, 1), (3, 1)], weight=2,
                           exact=False)
    psi0 = psi0.scale(0.01 / psi0.norm())
    lam, dt = -1.5, 0.01
    traj = evolve_general(zero, lam, 0.1, dt=dt, N=6, psi0=psi0)
    for a, b in zip(traj.phi_samples, traj.phi_samples[1:]):
        for (p, q), c in b.blocks.items():
            prev = np.linalg.norm(a.block(p, q))
            assert np.linalg.norm(c) <= math.exp(3 * lam * dt) * prev * (1 + 1e-12)


def test_exponential_map_cases():
    assert exponential_map(SphereFunction.zero(weight=2), -1.0).is_zero()
    phidot = SphereFunction.basis_element(0, 4, 3, weight=2).to_float().scale(1e-3)
    out = exponential_map(phidot, -1.0, dt=0.05, N=6)
    assert out.distance(phidot) < 1e-12


def test_exponential_map_linearization_is_identity():
    phidot = SphereFunction.basis_element(2, 2, 1, weight=2).to_float()
    phidot = phidot.scale(1 / phidot.norm())
    errs = []
    for eps in (1e-2, 5e-3):
        out = exponential_map(phidot.scale(eps), -1.0, dt=0.05, N=6)
        errs.append(out.distance(phidot.scale(eps)) / eps)
    assert errs[1] < errs[0] and errs[1] < 1e-2


def test_trajectory_json_and_csv():
    phidot = SphereFunction.basis_element(0, 4, 0, weight=2).to_float().scale(1e-3)
    traj = evolve_general(phidot, -1.0, 0.02, dt=0.01, N=5)
    back = Trajectory.from_json(json.loads(json.dumps(traj.to_json())))
    assert back.times == traj.times
    assert all(a.distance(b) == 0 for a, b in zip(back.phi_samples, traj.phi_samples))
    assert traj.residuals_csv().splitlines()[0] == "t,psi_l2,f_l2,contraction"
