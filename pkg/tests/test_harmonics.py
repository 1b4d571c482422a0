"""Bigraded spherical harmonics: basis, decomposition, products, quadrature."""

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from crsphere.errors import GridTooCoarse
from crsphere.harmonics import (
    PackedSpace,
    Polynomial,
    QuadratureGrid,
    SphereFunction,
    basis,
    evaluate,
    evaluate_grid,
    grid_project,
    harmonic_decompose,
    inner_product,
    multiply,
    norm2,
    random_function,
)
from crsphere.scalars import ONE, GaussQ, fmpq

from conftest import exact_functions, float_functions

z, zb, w, wb = Polynomial.z(), Polynomial.zb(), Polynomial.w(), Polynomial.wb()


def const(x):
    return Polynomial.constant(GaussQ(x))


def proportional(P, Q):
    """True when P = c Q for a nonzero scalar c."""
    (k, v), *_ = Q.terms.items()
    c = P.terms.get(k)
    return c is not None and P == Q * Polynomial.constant(c / v)


# -- basis ------------------------------------------------------------------

def test_basis_holomorphic_degree_two():
    assert set(map(repr, basis(2, 0))) == set(map(repr, [z ** 2, z * w, w ** 2]))


def test_basis_antiholomorphic_degree_three_up_to_scale():
    expected = [zb ** 3, zb ** 2 * wb, zb * wb ** 2, wb ** 3]
    got = basis(0, 3)
    assert len(got) == 4
    for e in expected:
        assert sum(proportional(g, e) for g in got) == 1


def _sympy_harmonic_dim(p, q):
    """Rank of the ambient Laplacian kernel on bihomogeneous monomials (independent oracle)."""
    Z, Zb, W, Wb = sp.symbols("z zb w wb")
    monos = [Z ** a * W ** (p - a) * Zb ** b * Wb ** (q - b)
             for a in range(p + 1) for b in range(q + 1)]
    lap = lambda f: sp.diff(f, Z, Zb) + sp.diff(f, W, Wb)
    if p == 0 or q == 0:
        return len(monos)
    targets = [Z ** a * W ** (p - 1 - a) * Zb ** b * Wb ** (q - 1 - b)
               for a in range(p) for b in range(q)]
    M = sp.Matrix([[sp.Poly(lap(m), Z, Zb, W, Wb).coeff_monomial(t) for m in monos]
                   for t in targets])
    return len(monos) - M.rank()


@pytest.mark.parametrize("p,q", [(p, q) for p in range(7) for q in range(7 - p)])
def test_basis_dimension_matches_laplacian_kernel(p, q):
    B = basis(p, q)
    assert len(B) == p + q + 1 == _sympy_harmonic_dim(p, q)
    for e in B:
        assert e.laplacian().is_zero()
        assert e.bidegrees() == {(p, q)}


def test_basis_dimension_up_to_twelve():
    for p in range(13):
        for q in range(13 - p):
            assert len(basis(p, q)) == p + q + 1


# -- decomposition ----------------------------------------------------------

def test_decompose_z_zbar():
    u = harmonic_decompose(z * zb)
    assert sorted(u.blocks) == [(0, 0), (1, 1)]
    assert u.block(0, 0)[0] == GaussQ(fmpq(1, 2))
    assert u.block(1, 1) is not None
    target = (z * zb - w * wb) * const(fmpq(1, 2))
    assert harmonic_decompose(target) == u - SphereFunction.constant(GaussQ(fmpq(1, 2)))


def test_decompose_harmonic_is_identity():
    P = basis(2, 3)[1]
    u = harmonic_decompose(P)
    assert list(u.blocks) == [(2, 3)]
    assert u.to_polynomial() == P


def test_decompose_radial_factor_drops():
    u = harmonic_decompose((z * zb + w * wb) * z)
    assert u == harmonic_decompose(z)


def test_decompose_non_bihomogeneous():
    u = harmonic_decompose(z + wb * wb + const(3))
    assert sorted(u.blocks) == [(0, 0), (0, 2), (1, 0)]


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(0, 3))
def test_decompose_agrees_on_sphere(seed, m, n):
    rng = np.random.default_rng(seed)
    P = Polynomial()
    for _ in range(3):
        a = int(rng.integers(0, m + 1))
        b = int(rng.integers(0, n + 1))
        P = P + Polynomial.monomial(a, b, m - a, n - b, GaussQ(int(rng.integers(-3, 4))))
    u = harmonic_decompose(P)
    for (p, q) in u.blocks:
        assert (p + q) <= m + n and (m - p) == (n - q)
    for _ in range(3):
        zz, ww = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
        r = math.sqrt(abs(zz) ** 2 + abs(ww) ** 2)
        zz, ww = zz / r, ww / r
        assert abs(P.evaluate(zz, ww) - u.to_polynomial().evaluate(zz, ww)) < 1e-10
    for (p, q) in u.blocks:
        assert harmonic_decompose(P).map_blocks(
            lambda a, b, c: ((a, b), c) if (a, b) == (p, q) else None
        ).to_polynomial().laplacian().is_zero()


# -- products ---------------------------------------------------------------

def test_multiply_identity_and_z_zbar():
    u = harmonic_decompose(z * w * wb - zb)
    one = SphereFunction.constant(ONE)
    assert multiply(u, one) == u
    assert multiply(harmonic_decompose(z), harmonic_decompose(zb)) == harmonic_decompose(z * zb)


def test_multiply_truncation_flag():
    u = harmonic_decompose(z ** 3)
    prod = multiply(u, u, N=4)
    assert prod.truncated and prod.is_zero()
    assert not multiply(u, u, N=6).truncated


@given(exact_functions(N=3), exact_functions(N=3))
def test_multiply_commutative_and_weighted(u, v):
    v = v.with_weight(2)
    uv = multiply(u, v)
    assert uv == multiply(v, u)
    assert uv.weight == 2


@given(exact_functions(N=2, max_blocks=2), exact_functions(N=2, max_blocks=2),
       exact_functions(N=2, max_blocks=2))
def test_multiply_associative(u, v, x):
    assert multiply(multiply(u, v), x) == multiply(u, multiply(v, x))


@given(float_functions(N=4), float_functions(N=4))
def test_multiply_matches_grid_product(u, v):
    grid = QuadratureGrid.for_degree(16)
    prod = multiply(u, v)
    lhs = evaluate_grid(prod, grid)
    rhs = evaluate_grid(u, grid) * evaluate_grid(v, grid)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


# -- inner product ----------------------------------------------------------

def test_inner_product_values():
    Z = harmonic_decompose(z)
    assert inner_product(Z, Z) == GaussQ(fmpq(1, 2))
    Z2 = harmonic_decompose(z ** 2)
    assert inner_product(Z2, Z2) == GaussQ(fmpq(1, 3))


def test_monomial_integral_against_quadrature():
    grid = QuadratureGrid.for_degree(12)
    zz, ww = grid.z, grid.w
    for a in range(4):
        for c in range(4 - a):
            val = grid.integrate(np.abs(zz) ** (2 * a) * np.abs(ww) ** (2 * c))
            exact = math.factorial(a) * math.factorial(c) / math.factorial(a + c + 1)
            assert abs(val - exact) < 1e-13


@given(exact_functions(N=4), exact_functions(N=4))
def test_inner_product_hermitian(u, v):
    assert inner_product(u, v) == inner_product(v, u).conjugate()
    assert inner_product(u, u).im == 0 and inner_product(u, u).re > 0


def test_distinct_blocks_orthogonal():
    rng = np.random.default_rng(1)
    for (a, b) in [((1, 2), (2, 1)), ((0, 3), (3, 0)), ((2, 2), (1, 1))]:
        u = random_function(rng, [a])
        v = random_function(rng, [b])
        assert inner_product(u, v).is_zero()


@given(exact_functions(N=5))
def test_conjugation_isometric_involution(u):
    c = u.conj()
    assert c.conj() == u
    assert {(q, p) for (p, q) in u.blocks} == set(c.blocks)
    assert norm2(c) == norm2(u)


# -- evaluation and grids ---------------------------------------------------

def test_evaluate_trivial_points():
    one = SphereFunction.constant(ONE)
    assert evaluate(one, (0.3, 1.1, 0.7)) == pytest.approx(1)
    assert evaluate(harmonic_decompose(z), (0.0, 0.0, 0.0)) == pytest.approx(1)


@given(float_functions(N=5))
def test_parseval_on_grid(u):
    grid = QuadratureGrid.for_degree(2 * 5)
    vals = evaluate_grid(u, grid)
    assert grid.integrate(np.abs(vals) ** 2) == pytest.approx(norm2(u), rel=1e-11, abs=1e-13)


@given(float_functions(N=6))
def test_grid_round_trip(u):
    grid = QuadratureGrid.for_degree(12)
    back = grid_project(evaluate_grid(u, grid), grid, 6)
    assert back.distance(u) < 1e-11


def test_grid_project_zero_and_too_coarse():
    grid = QuadratureGrid.for_degree(8)
    assert grid_project(np.zeros(grid.shape), grid, 4).is_zero(1e-15)
    with pytest.raises(GridTooCoarse):
        grid_project(np.zeros(grid.shape), grid, 5)


def test_aliasing_bound_degree_plus_one():
    """Degree N+1 input on a 2N grid: round-trip error is bounded by the aliased content."""
    N = 4
    grid = QuadratureGrid.for_degree(2 * N)
    rng = np.random.default_rng(7)
    u = random_function(rng, [(0, N + 1), (2, N - 1), (3, 2), (1, 1)], exact=False)
    low = u.map_blocks(lambda p, q, c: ((p, q), c) if p + q <= N else None)
    back = grid_project(evaluate_grid(u, grid), grid, N)
    err = back.distance(low)
    # explicit alias norm: sum over high basis elements of |coeff| * ||project(e)||
    bound = 0.0
    for (p, q), c in u.blocks.items():
        if p + q <= N:
            continue
        for a, ca in enumerate(c):
            e = SphereFunction.basis_element(p, q, a).to_float()
            alias = grid_project(evaluate_grid(e, grid), grid, N)
            bound += abs(ca) * alias.norm()
    assert err <= bound + 1e-12
    assert back.degree() <= N


def test_packed_space_operators_match_exact():
    rng = np.random.default_rng(3)
    u = random_function(rng, [(2, 1), (0, 3), (3, 2)])
    sp_ = PackedSpace(6)
    from crsphere.operators import apply_T, apply_Z1, apply_Z1bar
    v = sp_.from_function(u.to_float())
    assert np.allclose(sp_.Z1(v), sp_.from_function(apply_Z1(u).to_float()), atol=1e-12)
    assert np.allclose(sp_.Z1bar(v), sp_.from_function(apply_Z1bar(u).to_float()), atol=1e-12)
    assert np.allclose(sp_.T(v), sp_.from_function(apply_T(u).to_float()), atol=1e-12)


# -- serialization ----------------------------------------------------------

@given(exact_functions(N=5, weight=2))
def test_json_round_trip_exact(u):
    assert SphereFunction.from_json(u.to_json()) == u


@given(float_functions(N=5))
def test_json_round_trip_float(u):
    assert SphereFunction.from_json(u.to_json()).distance(u) == 0.0


def test_empty_function_any_weight():
    for wgt in (0, 2):
        u = SphereFunction.zero(weight=wgt)
        assert u.is_zero() and u.weight == wgt
