"""Differential operators on S^3 as block operators.

In the canonical basis e_{p,q,a} = (Z1)^q(z^a w^{p+q-a}) the frame operators
are diagonal in a:

    Z1     e_{p,q,a} = e_{p-1,q+1,a}            (zero when p = 0)
    Z1bar  e_{p,q,a} = -(p+1) q e_{p+1,q-1,a}   (zero when q = 0)
    T      e_{p,q,a} = i(p-q) e_{p,q,a}

The Z1bar factor follows from Z1bar Z1 = -p(q+1) on H_{p,q}.  These block
matrices are also exposed as :class:`BlockOperator` objects whose entries are
independently re-derivable by polynomial differentiation.
"""

from __future__ import annotations

import math

import numpy as np

from . import config
from .errors import DeformationTooLarge, NotInImage
from .harmonics import (
    PackedSpace,
    QuadratureGrid,
    SphereFunction,
    block_norm2,
    evaluate_grid,
    grid_project,
)
from .scalars import ZERO, GaussQ, format_rational

REGIONS = ("Q_GE_2", "Q_IN_01", "P_IN_01", "BE", "BE_PRIME", "CD", "CD_PRIME")


# ---------------------------------------------------------------------------
# Block operators
# ---------------------------------------------------------------------------

class BlockOperator:
    """Linear operator acting blockwise with a fixed block-index shift.

    ``matrices[(p, q)]`` maps block (p, q) to block (p + dp, q + dq); it is
    a tuple of rows of :class:`GaussQ` in exact mode or a numpy array in
    float mode.  Blocks without a matrix are sent to zero.
    """

    def __init__(self, shift, matrices, weight_delta=0, exact=True):
        self.shift = (int(shift[0]), int(shift[1]))
        self.weight_delta = int(weight_delta)
        self.exact = exact
        self.matrices = {}
        dp, dq = self.shift
        for (p, q), M in matrices.items():
            tp, tq = p + dp, q + dq
            rows, cols = tp + tq + 1, p + q + 1
            if exact:
                M = tuple(tuple(GaussQ.coerce(x) for x in row) for row in M)
                shape = (len(M), len(M[0]) if M else 0)
            else:
                M = np.asarray(M, dtype=complex)
                shape = M.shape
            if shape != (rows, cols):
                raise ValueError(f"matrix for block ({p},{q}) has shape {shape}, "
                                 f"expected {(rows, cols)}")
            self.matrices[(p, q)] = M

    def apply(self, u: SphereFunction) -> SphereFunction:
        if u.exact != self.exact:
            raise TypeError("scalar mode mismatch")
        dp, dq = self.shift
        out = {}
        for (p, q), c in u.blocks.items():
            M = self.matrices.get((p, q))
            if M is None:
                continue
            if self.exact:
                out[(p + dp, q + dq)] = tuple(
                    sum((m * x for m, x in zip(row, c) if not m.is_zero()), ZERO) for row in M)
            else:
                out[(p + dp, q + dq)] = M @ c
        return SphereFunction(out, u.weight + self.weight_delta, u.truncation, self.exact)

    __call__ = apply

    def compose(self, first: "BlockOperator") -> "BlockOperator":
        """The operator ``self o first``."""
        if first.exact != self.exact:
            raise TypeError("scalar mode mismatch")
        dp, dq = first.shift
        mats = {}
        for (p, q), M1 in first.matrices.items():
            M2 = self.matrices.get((p + dp, q + dq))
            if M2 is None:
                continue
            mats[(p, q)] = _matmul(M2, M1, self.exact)
        return BlockOperator((dp + self.shift[0], dq + self.shift[1]), mats,
                             self.weight_delta + first.weight_delta, self.exact)

    def __matmul__(self, other):
        return self.compose(other)

    def to_json(self) -> dict:
        blocks = []
        for (p, q) in sorted(self.matrices):
            M = self.matrices[(p, q)]
            if self.exact:
                re = [[format_rational(x.re) for x in row] for row in M]
                im = [[format_rational(x.im) for x in row] for row in M]
            else:
                re, im = M.real.tolist(), M.imag.tolist()
            blocks.append({"p": p, "q": q, "re": re, "im": im})
        return {"shift": list(self.shift), "weight_delta": self.weight_delta, "blocks": blocks}


def _matmul(A, B, exact):
    if not exact:
        return A @ B
    n, k, m = len(A), len(B), len(B[0]) if B else 0
    return tuple(tuple(sum((A[i][l] * B[l][j] for l in range(k)), ZERO) for j in range(m))
                 for i in range(n))


def _scalar_matrix(dim_out, dim_in, c, exact):
    if exact:
        c = GaussQ.coerce(c)
        return tuple(tuple(c if i == j else ZERO for j in range(dim_in)) for i in range(dim_out))
    return np.eye(dim_out, dim_in) * c


def _blocks_upto(N):
    return [(p, d - p) for d in range(N + 1) for p in range(d + 1)]


def Z1_operator(N, exact=True) -> BlockOperator:
    mats = {(p, q): _scalar_matrix(p + q + 1, p + q + 1, 1, exact)
            for p, q in _blocks_upto(N) if p >= 1}
    return BlockOperator((-1, 1), mats, 0, exact)


def Z1bar_operator(N, exact=True) -> BlockOperator:
    mats = {(p, q): _scalar_matrix(p + q + 1, p + q + 1, -(p + 1) * q, exact)
            for p, q in _blocks_upto(N) if q >= 1}
    return BlockOperator((1, -1), mats, 0, exact)


def T_operator(N, exact=True) -> BlockOperator:
    mats = {(p, q): _scalar_matrix(p + q + 1, p + q + 1,
                                   GaussQ(0, p - q) if exact else 1j * (p - q), exact)
            for p, q in _blocks_upto(N)}
    return BlockOperator((0, 0), mats, 0, exact)


def nabla0_operator(N, weight, exact=True) -> BlockOperator:
    mats = {(p, q): _scalar_matrix(p + q + 1, p + q + 1,
                                   GaussQ(0, p - q + 2 * weight) if exact
                                   else 1j * (p - q + 2 * weight), exact)
            for p, q in _blocks_upto(N)}
    return BlockOperator((0, 0), mats, 0, exact)


# ---------------------------------------------------------------------------
# Fast application
# ---------------------------------------------------------------------------

def _scale_block(c, s, exact):
    if exact:
        s = GaussQ.coerce(s)
        return tuple(x * s for x in c)
    return c * s


def apply_Z1(u: SphereFunction) -> SphereFunction:
    return u.map_blocks(lambda p, q, c: ((p - 1, q + 1), c) if p >= 1 else None)


def apply_Z1bar(u: SphereFunction) -> SphereFunction:
    return u.map_blocks(
        lambda p, q, c: ((p + 1, q - 1), _scale_block(c, -(p + 1) * q, u.exact)) if q >= 1 else None)


def apply_T(u: SphereFunction) -> SphereFunction:
    return u.map_blocks(
        lambda p, q, c: ((p, q), _scale_block(c, GaussQ(0, p - q) if u.exact else 1j * (p - q),
                                              u.exact)) if p != q else None)


def apply_nabla0(u: SphereFunction) -> SphereFunction:
    """Weight-aware Reeb derivative: T + 2i * weight."""
    w2 = 2 * u.weight

    def fn(p, q, c):
        k = p - q + w2
        if k == 0:
            return None
        return (p, q), _scale_block(c, GaussQ(0, k) if u.exact else 1j * k, u.exact)

    return u.map_blocks(fn)


def apply_Z1_squared(u):
    return apply_Z1(apply_Z1(u))


def apply_Z1bar_squared(u):
    return apply_Z1bar(apply_Z1bar(u))


def sublaplacian_eigencheck(p: int, q: int) -> int:
    """Eigenvalue of -(Z1 Z1bar + Z1bar Z1) on H_{p,q}."""
    if p < 0 or q < 0:
        raise ValueError("p, q must be non-negative")
    return 2 * p * q + p + q


def fs_weight(p, q, s):
    return (1 + sublaplacian_eigencheck(p, q)) ** s


# ---------------------------------------------------------------------------
# Solver for (Z1)^2 and projections
# ---------------------------------------------------------------------------

def solve_Z1_squared(g: SphereFunction, tol=None) -> SphereFunction:
    """Unique u without p in {0, 1} components such that (Z1)^2 u = g."""
    bad = [(p, q) for (p, q) in g.support(tol if not g.exact else None) if q < 2]
    if bad:
        raise NotInImage(f"right-hand side has components in q in {{0, 1}}: {bad}")
    return g.map_blocks(lambda p, q, c: ((p + 2, q - 2), c) if q >= 2 else None)


def _in_region(p, q, region):
    if region == "Q_GE_2":
        return q >= 2
    if region == "Q_IN_01":
        return q <= 1
    if region == "P_IN_01":
        return p <= 1
    if region in ("BE", "BE_PRIME"):
        return q >= p + 4
    if region in ("CD", "CD_PRIME"):
        return q == p + 4
    raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")


def critical_constant(p):
    """Z1bar^2 acts on H_{p,p+4} as this multiple of the identity into H_{p+2,p+2}."""
    return (p + 1) * (p + 2) * (p + 3) * (p + 4)


def reality_defect(phi: SphereFunction, p: int) -> SphereFunction:
    """Im((Z1bar)^2 phi_{p,p+4}) as a function in H_{p+2,p+2}."""
    blk = SphereFunction({(p, p + 4): phi.block(p, p + 4)}, 0, None, phi.exact)
    return apply_Z1bar_squared(blk).imag_part()


def project(u: SphereFunction, region: str) -> SphereFunction:
    """Keep the blocks in ``region``; the primed regions also impose reality.

    For BE_PRIME and CD_PRIME the critical-diagonal block phi_{p,p+4} is
    replaced by (Z1bar^2)^{-1} Re(Z1bar^2 phi_{p,p+4}), which is a real-linear
    idempotent map with Im(Z1bar^2 .) = 0 on its image.
    """
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")
    if region in ("BE_PRIME", "CD_PRIME") and u.weight != 2:
        raise ValueError(f"{region} requires a weight-2 tensor, got weight {u.weight}")
    kept = {k: c for k, c in u.blocks.items() if _in_region(k[0], k[1], region)}
    out = u._new(kept)
    if region in ("BE_PRIME", "CD_PRIME"):
        for (p, q) in list(kept):
            if q != p + 4:
                continue
            c = critical_constant(p)
            blk = SphereFunction({(p, q): kept[(p, q)]}, 0, None, u.exact)
            h = apply_Z1bar_squared(blk).real_part()
            hc = h.block(p + 2, p + 2)
            kept[(p, q)] = tuple(x / c for x in hc) if u.exact else hc / c
        out = u._new({k: v for k, v in kept.items() if not _zero(v)})
    return out


def _zero(c):
    if isinstance(c, tuple):
        return all(x.is_zero() for x in c)
    return not np.any(c)


# ---------------------------------------------------------------------------
# Norms and solver constant
# ---------------------------------------------------------------------------

def fs_norm2(u: SphereFunction, s: int):
    """Squared Folland-Stein norm sum (1 + 2pq + p + q)^s ||u_{p,q}||^2."""
    if s < 0:
        raise ValueError("s must be non-negative")
    total = 0
    for (p, q) in u.blocks:
        total = total + fs_weight(p, q, s) * block_norm2(u, p, q)
    return total


def fs_norm(u: SphereFunction, s: int) -> float:
    return math.sqrt(float(fs_norm2(u, s)))


def solver_ratio2(p, q, s):
    """||solve g||_s^2 / ||g||_{s-2}^2 for g in H_{p,q}, q >= 2 (exact rational).

    Uses ||Z1 v||^2 = p'(q'+1) ||v||^2 on H_{p',q'} twice; independent of
    the vector inside the block.
    """
    from flint import fmpq
    num = fmpq(fs_weight(p + 2, q - 2, s))
    den = fmpq((1 + sublaplacian_eigencheck(p, q))) ** (s - 2) * (p + 2) * (q - 1) * (p + 1) * q
    return num / den


def solver_constant(s: int, N: int):
    """Empirical C: sup of ||solve g||_s / ||g||_{s-2} over q >= 2, p + q <= N.

    Returns (C, argmax block).
    """
    best, arg = 0.0, None
    for p, q in _blocks_upto(N):
        if q < 2:
            continue
        r = math.sqrt(float(solver_ratio2(p, q, s)))
        if r > best:
            best, arg = r, (p, q)
    return best, arg


# ---------------------------------------------------------------------------
# Deformed pseudohermitian data
# ---------------------------------------------------------------------------

def _grid_for(phi, grid):
    if grid is None:
        d = max(phi.degree(), 0)
        grid = QuadratureGrid.for_degree(2 * d + 4)
    return grid


def phi_derivative_values(phi: SphereFunction, grid: QuadratureGrid) -> dict:
    """Grid values of phi, its conjugate and their frame derivatives.

    Keys: phi, phibar, phi_1 (Z1 phi), phi_1b (Z1bar phi), phibar_1 (Z1 phibar),
    phibar_1b (Z1bar phibar), phi_0 (nabla0 phi), phibar_0 (its conjugate).
    """
    ev = lambda f: evaluate_grid(f, grid)
    phi_v = ev(phi)
    phi_1 = ev(apply_Z1(phi))
    phi_1b = ev(apply_Z1bar(phi))
    phi_0 = ev(apply_nabla0(phi.with_weight(2)))
    return {
        "phi": phi_v, "phibar": np.conj(phi_v),
        "phi_1": phi_1, "phi_1b": phi_1b,
        "phibar_1": np.conj(phi_1b), "phibar_1b": np.conj(phi_1),
        "phi_0": phi_0, "phibar_0": np.conj(phi_0),
    }


def check_deformation(phi_values, margin=None):
    if margin is None:
        margin = config.get().deformation_margin
    sup = float(np.max(np.abs(phi_values))) if np.size(phi_values) else 0.0
    if sup >= 1 - margin:
        raise DeformationTooLarge(f"sup |phi| = {sup:.6g} >= 1 - {margin}")
    return sup


def deformed_data(phi: SphereFunction, grid: QuadratureGrid | None = None, N=None) -> dict:
    """Connection coefficients and torsion of the deformed structure on a grid.

    Returns grid arrays ``omega_11``, ``omega_10``, ``A11`` and the truncated
    SphereFunction ``A11_function`` (projection of the A11 values to degree N).
    """
    if phi.weight != 2:
        raise ValueError("deformed_data expects a weight-2 deformation tensor")
    phi = phi.to_float()
    grid = _grid_for(phi, grid)
    v = phi_derivative_values(phi, grid)
    check_deformation(v["phi"])
    f, fb = v["phi"], v["phibar"]
    mod2 = np.abs(f) ** 2
    one = 1 - mod2
    omega_11 = (2 * v["phi_1b"] + f * v["phibar_1"] + fb * v["phi_1"]
                + f ** 2 * v["phibar_1b"] - mod2 * v["phi_1b"]) / (2 * one ** 1.5)
    omega_10 = -2j + (f * v["phibar_0"] - fb * v["phi_0"]) / (2 * one)
    A11 = -v["phi_0"] / one
    if N is None:
        N = phi.truncation if phi.truncation is not None else max(phi.degree(), 0)
    N = min(N, grid.exact_degree // 2)
    A11_fn = grid_project(A11, grid, N, weight=2)
    return {"omega_11": omega_11, "omega_10": omega_10, "A11": A11,
            "A11_function": A11_fn, "grid": grid, "sup_phi": float(np.max(np.sqrt(mod2)))}


def omega_11_newconn(phi: SphereFunction, grid: QuadratureGrid) -> np.ndarray:
    """omega_1^1_1 as phi_{,1b}/sqrt(1-|phi|^2) + Ztilde(1/sqrt(1-|phi|^2)).

    Ztilde |phi|^2 is computed from the spectral derivative of the exact
    product |phi|^2 rather than by the Leibniz rule.
    """
    from .harmonics import multiply
    mod2_fn = multiply(phi, phi.conj().with_weight(phi.weight))
    d_mod2 = (evaluate_grid(apply_Z1(mod2_fn), grid)
              + evaluate_grid(phi, grid) * evaluate_grid(apply_Z1bar(mod2_fn), grid))
    one = 1 - np.abs(evaluate_grid(phi, grid)) ** 2
    ztilde = 0.5 * one ** -1.5 * d_mod2
    return evaluate_grid(apply_Z1bar(phi), grid) / np.sqrt(one) + ztilde


# ---------------------------------------------------------------------------
# Float packed helpers used by the time-stepping solvers
# ---------------------------------------------------------------------------

def packed_solve_Z1_squared(space: PackedSpace, vec):
    """Packed analogue of :func:`solve_Z1_squared` (ignores q in {0, 1} parts)."""
    out = space.zeros()
    src = np.nonzero(space.q >= 2)[0]
    dst = np.array([space.offsets[(p + 2, q - 2)] + a for p, q, a in
                    zip(space.p[src], space.q[src], space.a[src])], dtype=int)
    out[dst] = vec[src]
    return out
