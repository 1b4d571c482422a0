"""Exception types raised across the package."""


class CRSphereError(Exception):
    """Base class for all package errors."""


class TruncationLoss(CRSphereError):
    """A product or sum dropped nonzero blocks above the truncation degree."""


class GridTooCoarse(CRSphereError):
    """The quadrature grid cannot resolve the requested degree."""


class NotInImage(CRSphereError):
    """Right-hand side of (Z1)^2 u = g has components in blocks q in {0, 1}."""


class DeformationTooLarge(CRSphereError):
    """sup |phi| on the grid is not safely below 1."""


class NotInfinitesimallyEmbeddable(CRSphereError):
    """The linearized deformation has blocks with q in {0, 1}."""

    def __init__(self, message, blocks=()):
        super().__init__(message)
        self.blocks = list(blocks)


class NotBurnsEpstein(CRSphereError):
    """The deformation has blocks with q < p + 4."""

    def __init__(self, message, blocks=()):
        super().__init__(message)
        self.blocks = list(blocks)


class FixedPointDiverged(CRSphereError):
    """Fixed-point iteration failed to contract."""


class StepRejected(CRSphereError):
    """A time step is incompatible with the requested accuracy or stability."""


class SignLost(CRSphereError):
    """Re f_t lost its strict sign during a flow run."""


class ConfigError(CRSphereError):
    """Invalid run configuration; the message names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(CRSphereError):
    """Polynomial text could not be parsed."""

    def __init__(self, message, line=1, column=1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
