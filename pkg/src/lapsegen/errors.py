"""Exception taxonomy shared across the package.

The CLI maps each class to a distinct exit code.
"""


class LapsegenError(Exception):
    """Base class of all package errors."""


class InvalidArgument(LapsegenError, ValueError):
    """Shape mismatch, malformed condition vector, bad configuration value."""


class NumericError(LapsegenError, ArithmeticError):
    """Non-finite values encountered where finiteness is an invariant."""


class AnnotationError(LapsegenError, ValueError):
    """Degree annotation file unusable (too few anchors, bad ordering)."""


class DataError(LapsegenError, ValueError):
    """Dataset too small / malformed for the requested operation."""
