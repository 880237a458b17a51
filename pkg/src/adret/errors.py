"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
data/format problems exit 2, numerical failures exit 3.
"""


class AdretError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AdretError):
    """Operands have incompatible shapes. Message names both shapes."""


class DegenerateVectorError(AdretError):
    """A vector that must be normalized has (near-)zero norm."""


class ConfigError(AdretError):
    """Invalid or missing configuration. Message names the field."""


class FormatError(AdretError):
    """A cache file failed validation. Message carries the byte offset."""


class DataError(AdretError):
    """Inconsistent data, e.g. a query with no ground-truth entry."""


class EvaluationError(AdretError):
    """A numerical evaluation produced non-finite values."""


class TrainingDivergedError(AdretError):
    """Training hit a non-finite loss or gradient."""
