"""Exception and warning types raised across the package."""


class OTSeriesError(Exception):
    """Base class for package errors."""


class ValidationError(OTSeriesError, ValueError):
    """Input data violates a documented invariant."""


class SchemaError(ValidationError):
    """A required CSV column is missing."""

    def __init__(self, column, path=None):
        self.column = column
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing required column {column!r}{where}")


class SizeError(ValidationError):
    """A series or point set is too short for the requested operation."""


class UndefinedStatisticError(OTSeriesError, ArithmeticError):
    """The requested statistic has a zero denominator."""


class ConfigError(OTSeriesError):
    """Invalid pipeline configuration."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""


class NotConvergedError(OTSeriesError):
    """Raised instead of warning when non-convergence is configured as fatal."""
