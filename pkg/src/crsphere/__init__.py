"""Spectral tools for CR structures on the three-sphere."""

from .errors import (
    ConfigError,
    CRSphereError,
    DeformationTooLarge,
    FixedPointDiverged,
    GridTooCoarse,
    NotBurnsEpstein,
    NotInfinitesimallyEmbeddable,
    NotInImage,
    ParseError,
    SignLost,
    StepRejected,
    TruncationLoss,
)
from .flow import EmbeddingState, cr_residual, integrate
from .harmonics import Polynomial, QuadratureGrid, SphereFunction, basis, harmonic_decompose
from .operators import apply_T, apply_Z1, apply_Z1bar, project, solve_Z1_squared
from .slice import SliceDecomposition, cone_report, slice_decompose
from .tangency import TangencySeries, be_series, formal_series, sign_certificate

__version__ = "0.1.0"

__all__ = [
    "Polynomial", "SphereFunction", "QuadratureGrid", "basis", "harmonic_decompose",
    "apply_Z1", "apply_Z1bar", "apply_T", "solve_Z1_squared", "project",
    "TangencySeries", "formal_series", "be_series", "sign_certificate",
    "SliceDecomposition", "slice_decompose", "cone_report",
    "EmbeddingState", "integrate", "cr_residual",
    "CRSphereError", "TruncationLoss", "GridTooCoarse", "NotInImage", "DeformationTooLarge",
    "NotInfinitesimallyEmbeddable", "NotBurnsEpstein", "FixedPointDiverged", "StepRejected",
    "SignLost", "ConfigError", "ParseError",
]
