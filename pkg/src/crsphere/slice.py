"""Linearized slice decomposition of deformation tensors.

Every weight-2 tensor splits uniquely as

    phidot = be_prime + i (Z1)^2 g + perp

with g real, perp supported on q in {0, 1}, and be_prime supported on
q >= p + 4 with Im((Z1bar)^2 be_prime_{p,p+4}) = 0 on the critical diagonal.
The splitting is computed block by block:

* q in {0, 1}: the block goes to ``perp``.
* 2 <= q <= p + 3: i (Z1)^2 g must produce the block, which fixes
  g_{p+2,q-2}.  Reality of g fixes the conjugate block g_{q-2,p+2}, whose
  image lands in block (q-4, p+4) above the diagonal; it is subtracted there.
* q = p + 4: (Z1bar)^2 (Z1)^2 = c_p Id on H_{p+2,p+2}, so
  g_{p+2,p+2} = Im((Z1bar)^2 phidot_{p,p+4}) / c_p is the real part removed.
* q > p + 4: what remains goes to ``be_prime``.

The map phidot -> i (Z1)^2 g is an oblique projection; :func:`oblique_norm`
reports its Folland-Stein operator norm on a truncation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import flint
import numpy as np

from . import config
from .harmonics import PackedSpace, SphereFunction
from .operators import (
    apply_Z1_squared,
    apply_Z1bar_squared,
    critical_constant,
    fs_weight,
    reality_defect,
)
from .scalars import GaussQ


@dataclass
class SliceDecomposition:
    be_prime: SphereFunction
    g: SphereFunction
    perp: SphereFunction
    residual_norm: float = 0.0

    @property
    def pi(self) -> SphereFunction:
        """The i (Z1)^2 g component."""
        return _i_Z1_squared(self.g)

    def reconstruct(self) -> SphereFunction:
        return self.be_prime + self.pi + self.perp

    def to_json(self) -> dict:
        return {"be_prime": self.be_prime.to_json(), "g": self.g.to_json(),
                "perp": self.perp.to_json(), "residual_norm": float(self.residual_norm)}

    @classmethod
    def from_json(cls, data: dict) -> "SliceDecomposition":
        return cls(SphereFunction.from_json(data["be_prime"]),
                   SphereFunction.from_json(data["g"]).with_weight(0),
                   SphereFunction.from_json(data["perp"]),
                   float(data.get("residual_norm", 0.0)))


def _i(u):
    return GaussQ(0, 1) if u.exact else 1j


def _i_Z1_squared(g: SphereFunction) -> SphereFunction:
    return apply_Z1_squared(g).scale(_i(g)).with_weight(2)


def _restrict(u, pred):
    return u._new({k: c for k, c in u.blocks.items() if pred(*k)})


@functools.lru_cache(maxsize=None)
def critical_block_det(p: int) -> flint.fmpq:
    """Exact determinant of (Z1bar)^2 (Z1)^2 on H_{p+2,p+2}."""
    P = p + 2
    n = 2 * P + 1
    M = flint.fmpq_mat(n, n)
    for a in range(n):
        e = SphereFunction.basis_element(P, P, a)
        img = apply_Z1bar_squared(apply_Z1_squared(e)).block(P, P)
        for b, x in enumerate(img):
            if x.im != 0:
                raise ArithmeticError("(Z1bar)^2 (Z1)^2 has a non-real entry")
            M[b, a] = x.re
    return M.det()


def slice_decompose(phidot: SphereFunction) -> SliceDecomposition:
    """Split a weight-2 tensor into its be_prime, i (Z1)^2 g and perp parts."""
    if phidot.weight != 2:
        raise ValueError(f"slice_decompose expects a weight-2 tensor, got weight {phidot.weight}")
    exact = phidot.exact
    trunc = phidot.truncation
    perp = _restrict(phidot, lambda p, q: q <= 1)
    below = _restrict(phidot, lambda p, q: 2 <= q <= p + 3)
    crit = sorted(p for (p, q) in phidot.blocks if q == p + 4)
    minus_i = GaussQ(0, -1) if exact else -1j
    # g_{p+2,q-2} from i (Z1)^2 g = phidot on the blocks below the cone
    g_low = below.map_blocks(lambda p, q, c: ((p + 2, q - 2), c), weight=0).scale(minus_i)
    g = g_low + g_low.conj()
    for p in crit:
        if critical_block_det(p) == 0:
            raise ArithmeticError(f"critical block for p = {p} is singular")
        c = critical_constant(p)
        g = g + (reality_defect(phidot, p) / c).with_weight(0)
    g = g.with_truncation(trunc) if trunc is not None else g
    pi = _i_Z1_squared(g)
    be_prime = phidot - perp - pi
    rest = phidot - (be_prime + pi + perp)
    residual = 0.0 if exact and rest.is_zero() else rest.norm()
    return SliceDecomposition(be_prime, g, perp, residual)


def oblique_Pi(phidot: SphereFunction) -> SphereFunction:
    """The oblique projection phidot -> i (Z1)^2 g of the slice splitting."""
    return slice_decompose(phidot).pi


def _real_matrix(N: int, s: float):
    """Real matrix of Pi on degree <= N weight-2 tensors in FS-orthonormal coordinates."""
    sp = PackedSpace(N)
    lam = np.array([fs_weight(p, q, s) for p, q in zip(sp.p, sp.q)], dtype=float)
    scale = np.sqrt(lam * sp.norm2)
    n = sp.size
    M = np.zeros((2 * n, 2 * n))
    # columns: real unit inputs, then imaginary ones; rows: real parts, then imaginary
    for j, unit in enumerate((1.0, 1j)):
        for k in range(n):
            vec = sp.zeros()
            vec[k] = unit / scale[k]
            u = sp.to_function(vec, weight=2, truncation=N)
            out = sp.from_function(oblique_Pi(u)) * scale
            M[:n, j * n + k] = out.real
            M[n:, j * n + k] = out.imag
    return M


def oblique_norm(N: int, s: float = 0, n_samples: int = 0, rng=None) -> dict:
    """Folland-Stein operator norm of Pi on the degree-N truncation.

    ``operator_norm`` is the largest singular value of the real matrix of Pi
    in FS-orthonormal coordinates; ``sampled_max`` is the largest ratio
    ||Pi u||_s / ||u||_s over ``n_samples`` random inputs (a lower bound).
    """
    M = _real_matrix(N, s)
    op = float(np.linalg.norm(M, 2)) if M.size else 0.0
    sampled = None
    if n_samples:
        rng = np.random.default_rng(0) if rng is None else rng
        X = rng.standard_normal((M.shape[1], n_samples))
        ratios = np.linalg.norm(M @ X, axis=0) / np.linalg.norm(X, axis=0)
        sampled = float(ratios.max())
    return {"N": N, "s": s, "operator_norm": op, "sampled_max": sampled}


# ---------------------------------------------------------------------------
# Cone membership
# ---------------------------------------------------------------------------

def cone_report(phi: SphereFunction, tol=None) -> dict:
    """Membership in the Burns-Epstein and critical-diagonal cones.

    Cones: BE (q >= p + 4), BE_prime (BE plus zero reality defect on every
    critical block), CD (support on q = p + 4) and CD_prime (CD plus zero
    reality defect).  Defects are Im((Z1bar)^2 phi_{p,p+4}) in H_{p+2,p+2}.
    """
    if phi.weight != 2:
        raise ValueError(f"cone_report expects a weight-2 tensor, got weight {phi.weight}")
    if tol is None and not phi.exact:
        tol = config.get().zero
    support = phi.support(tol)
    not_be = [k for k in support if k[1] < k[0] + 4]
    not_cd = [k for k in support if k[1] != k[0] + 4]
    defects = {}
    bad_defect = []
    for p, q in support:
        if q != p + 4:
            continue
        d = reality_defect(phi, p)
        defects[f"{p},{q}"] = d
        if not d.is_zero(tol):
            bad_defect.append((p, q))
    return {
        "BE": not not_be, "BE_prime": not not_be and not bad_defect,
        "CD": not not_cd, "CD_prime": not not_cd and not bad_defect,
        "offending_BE": [list(k) for k in not_be],
        "offending_CD": [list(k) for k in not_cd],
        "nonreal_critical": [list(k) for k in bad_defect],
        "reality_defects": {k: d.to_json() for k, d in defects.items()},
        "defect_norms": {k: d.norm() for k, d in defects.items()},
    }


__all__ = ["SliceDecomposition", "slice_decompose", "oblique_Pi", "oblique_norm",
           "cone_report", "critical_block_det"]
