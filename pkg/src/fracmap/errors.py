"""Exception hierarchy shared by every module (the CLI maps these to exit codes)."""


class FracmapError(Exception):
    """Base class for all package errors."""


class DomainError(FracmapError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(FracmapError, ValueError):
    """Inconsistent or unsupported configuration."""


class PreconditionError(FracmapError, ValueError):
    """Input data violates a stated precondition (e.g. non-unit field)."""


class ResourceError(FracmapError, MemoryError):
    pass


class NumericalError(FracmapError, ArithmeticError):
    """An iterative method failed; ``report`` carries diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class InterpolationError(FracmapError, ValueError):
    """Interpolated unit vectors are too short to renormalize."""
