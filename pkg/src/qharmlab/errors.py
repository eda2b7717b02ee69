"""Exception types shared across the package."""


class QHarmError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(QHarmError, ValueError):
    """Operands have incompatible multiplicity Q or coordinate dimension."""


class DomainError(QHarmError, ValueError):
    """Input outside the mathematical domain of the operation."""


class EmptyRegionError(QHarmError, ValueError):
    """A ball/region selector matched no lattice nodes."""


class UnderResolvedError(QHarmError, ValueError):
    """Requested scale is too small for the lattice spacing."""


class ProjectionError(QHarmError, ValueError):
    """Point is too far from the target manifold to project reliably."""


class NumericFailure(QHarmError, RuntimeError):
    """Non-finite values appeared during iteration."""

    def __init__(self, message, sweep=None):
        super().__init__(message)
        self.sweep = sweep


class PreconditionError(QHarmError, ValueError):
    """A checked hypothesis of an inequality/verdict does not hold."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class PathError(QHarmError, RuntimeError):
    """Failed to route an integration path in the complex plane."""


class AccuracyError(QHarmError, RuntimeError):
    """A quadrature self-consistency check failed."""


class UnreliableDegreeError(QHarmError, RuntimeError):
    """Degree integral is too far from an integer to round."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class ConfigError(QHarmError, ValueError):
    """A scenario configuration file failed validation."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class DepthCapError(QHarmError, RuntimeError):
    """Covering refinement exceeded its depth cap."""
