"""Numerical tolerances shared by the package.

Every tolerance used for a float comparison is read from ``TOLERANCES`` so
that call sites never hard-code a threshold.  Use :func:`tolerances` as a
context manager to override values temporarily.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    zero: float = 1e-12            # float scalar "is zero"
    fixed_point: float = 1e-13     # relative increment for the parabolic solver
    fixed_point_max_iter: int = 200
    deformation_margin: float = 1e-3   # require sup|phi| <= 1 - margin
    sign_margin: float = 0.0       # strict-sign certificate margin on |Re f|
    residual: float = 1e-9         # float residual acceptance
    max_rate_dt: float = 2.0       # reject steps with dt * max decay rate above this


TOLERANCES = Tolerances()


def get() -> Tolerances:
    return TOLERANCES


@contextlib.contextmanager
def tolerances(**overrides):
    """Temporarily override tolerance fields."""
    global TOLERANCES
    saved = TOLERANCES
    TOLERANCES = replace(saved, **overrides)
    try:
        yield TOLERANCES
    finally:
        TOLERANCES = saved
