"""Linearized slice decomposition and cone diagnostics."""

import json

import numpy as np
import pytest
from hypothesis import given, settings

from crsphere.harmonics import SphereFunction, random_function
from crsphere.operators import apply_Z1_squared, critical_constant, project, reality_defect
from crsphere.scalars import GaussQ
from crsphere.slice import (
    SliceDecomposition,
    cone_report,
    critical_block_det,
    oblique_norm,
    oblique_Pi,
    slice_decompose,
)

from conftest import exact_functions

I = GaussQ(0, 1)


def real_g(rng, support):
    g = random_function(rng, support)
    return g + g.conj()


@settings(max_examples=40)
@given(exact_functions(N=10, weight=2, max_blocks=6))
def test_round_trip_and_component_properties(phidot):
    dec = slice_decompose(phidot)
    assert dec.reconstruct() == phidot
    assert dec.residual_norm == 0.0
    assert dec.g.conj() == dec.g
    assert all(q <= 1 for (p, q) in dec.perp.blocks)
    assert all(q >= p + 4 for (p, q) in dec.be_prime.blocks)
    for (p, q) in dec.be_prime.blocks:
        if q == p + 4:
            assert reality_defect(dec.be_prime, p).is_zero()


@settings(max_examples=20)
@given(exact_functions(N=10, weight=2, max_blocks=6))
def test_components_are_fixed_by_redecomposition(phidot):
    dec = slice_decompose(phidot)
    a = slice_decompose(dec.be_prime)
    assert a.be_prime == dec.be_prime and a.g.is_zero() and a.perp.is_zero()
    b = slice_decompose(dec.pi)
    assert b.pi == dec.pi and b.be_prime.is_zero() and b.perp.is_zero()
    c = slice_decompose(dec.perp)
    assert c.perp == dec.perp and c.be_prime.is_zero() and c.g.is_zero()


def test_perp_input_goes_to_perp():
    phidot = random_function(np.random.default_rng(0), [(3, 0), (2, 1), (0, 1)], weight=2)
    dec = slice_decompose(phidot)
    assert dec.perp == phidot and dec.be_prime.is_zero() and dec.g.is_zero()
    assert oblique_Pi(phidot).is_zero()


def test_recovers_real_potential():
    rng = np.random.default_rng(1)
    g0 = real_g(rng, [(2, 3), (4, 2), (2, 2)])
    phidot = apply_Z1_squared(g0).scale(I).with_weight(2)
    dec = slice_decompose(phidot)
    assert dec.g == g0
    assert dec.be_prime.is_zero() and dec.perp.is_zero()


def test_above_diagonal_without_partner_is_untouched():
    phidot = random_function(np.random.default_rng(2), [(0, 5), (1, 7), (0, 9)], weight=2)
    dec = slice_decompose(phidot)
    assert dec.be_prime == phidot and dec.g.is_zero() and dec.perp.is_zero()


@settings(max_examples=20)
@given(exact_functions(N=8, weight=2, max_blocks=5))
def test_oblique_projection_idempotent(phidot):
    pi = oblique_Pi(phidot)
    assert oblique_Pi(pi) == pi


def test_conjugate_pairs_follow_intertwining():
    """For real g, conj of the (p, q) image block is -(Z1bar)^2 of the conjugate source."""
    rng = np.random.default_rng(3)
    g = real_g(rng, [(4, 2)])
    img = apply_Z1_squared(g).scale(I)
    from crsphere.operators import apply_Z1bar_squared
    assert img.conj() == apply_Z1bar_squared(g).scale(-I)


def test_critical_block_determinants():
    for p in range(5):
        n = 2 * p + 5
        assert critical_block_det(p) == critical_constant(p) ** n


def test_oblique_norm_bounded_and_reported():
    vals = {s: oblique_norm(6, s=s, n_samples=50) for s in (0, 2, 4)}
    for s, v in vals.items():
        assert np.isfinite(v["operator_norm"]) and v["operator_norm"] >= 1.0 - 1e-12
        assert v["sampled_max"] <= v["operator_norm"] * (1 + 1e-12)


def test_cone_report_cases():
    zero = SphereFunction.zero(weight=2)
    r = cone_report(zero)
    assert r["BE"] and r["BE_prime"] and r["CD"] and r["CD_prime"]
    for a in range(5):
        e = SphereFunction.basis_element(0, 4, a, weight=2)
        r = cone_report(e)
        assert r["BE"] and r["CD"]
        assert r["BE_prime"] == reality_defect(e, 0).is_zero()
    r = cone_report(SphereFunction.basis_element(3, 3, 0, weight=2))
    assert not r["BE"] and not r["CD"]
    assert r["offending_BE"] == [[3, 3]]
    json.dumps(r)


def test_cone_report_on_BE_prime_projection():
    phi = random_function(np.random.default_rng(4), [(0, 4), (1, 5), (0, 6)], weight=2)
    r = cone_report(project(phi, "BE_PRIME"))
    assert r["BE_prime"] and not r["CD"]


def test_json_round_trip():
    phidot = random_function(np.random.default_rng(5), [(2, 2), (0, 4), (1, 1)], weight=2)
    dec = slice_decompose(phidot)
    back = SliceDecomposition.from_json(json.loads(json.dumps(dec.to_json())))
    assert back.reconstruct() == phidot


def test_rejects_wrong_weight():
    with pytest.raises(ValueError):
        slice_decompose(SphereFunction.constant(GaussQ(1)))
