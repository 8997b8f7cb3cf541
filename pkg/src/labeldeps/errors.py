"""Semantic exception hierarchy.

Two branches: ``ValidationError`` for bad arguments (caller mistakes) and
``NumericalError`` for failures of the numerics on legal inputs.  The CLI maps
them to distinct exit codes.
"""


class LabelDepsError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LabelDepsError, ValueError):
    """An argument violates a documented precondition."""


class EnumerationBudgetError(ValidationError):
    """Exact enumeration was requested for a model too large to enumerate."""


class NumericalError(LabelDepsError):
    """A numerical operation failed on otherwise legal input."""


class SaturationError(NumericalError):
    """An exponent overflowed double precision."""


class SingularMatrixError(NumericalError):
    """A matrix that must be invertible is singular to working precision."""


class NotPositiveDefiniteError(NumericalError):
    """A quantity that must be positive (semi)definite is not."""


class DivergenceError(NumericalError):
    """The iterative solver's objective increased persistently."""
