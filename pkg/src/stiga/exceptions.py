"""Exception hierarchy shared by all modules."""


class StigaError(Exception):
    """Base class for errors raised by this package."""


class DomainError(StigaError, ValueError):
    """Evaluation point outside the parametric domain."""


class ArgumentError(StigaError, ValueError):
    """Invalid argument (degree, derivative order, size mismatch, unknown name)."""


class SingularGeometryError(StigaError):
    """Jacobian determinant of the geometry map vanishes."""


class CoefficientError(StigaError):
    """Non-positive coefficient sample where positivity is required."""


class NotSPDError(StigaError):
    """Matrix expected to be symmetric positive definite is not."""


class NumericalError(StigaError):
    """Breakdown of a numerical recurrence or eigensolver."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class ScalingError(StigaError):
    """Non-positive entry in a diagonal scaling."""


class ConfigError(StigaError, ValueError):
    """Invalid run configuration."""


class ResourceError(StigaError):
    """Run refused because its estimated footprint exceeds the budget."""
