"""Exception hierarchy shared by all rsvol modules."""

from __future__ import annotations


class RsvolError(Exception):
    """Base class; the CLI maps these to exit code 2 or 3."""

    exit_code = 2


class ValidationError(RsvolError, ValueError):
    pass


class NegativeOffDiagonal(ValidationError):
    pass


class ColumnSumNonzero(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class VolOutOfBounds(ValidationError):
    pass


class WindowOutOfRange(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class TooFewStrikes(ValidationError):
    pass


class ConfigParse(ValidationError):
    pass


class NumericError(RsvolError, ArithmeticError):
    exit_code = 3


class Overflow(NumericError):
    pass


class NonfiniteSolution(NumericError):
    pass


class SingularNormalMatrix(NumericError):
    pass


class GridTooCoarse(UserWarning):
    """Warning: explicit-leaning theta with a large dtau/dy^2."""
