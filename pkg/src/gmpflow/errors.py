"""Exception types shared across the package.

Each failure mode the numerical layer can report has its own class so
callers can distinguish validation problems (bad input data) from
numerical breakdowns (a computation that started but could not finish
within tolerance).
"""

from __future__ import annotations


class GmpflowError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(GmpflowError, ValueError):
    """Input data violates a documented precondition."""


class NumericalError(GmpflowError, ArithmeticError):
    """A computation ran but failed its accuracy contract."""


class SingularMatrixError(NumericalError):
    """A linear solve hit a pivot below tolerance.

    ``pivot_index`` is the 0-based index of the failing pivot and
    ``pivot_value`` its magnitude.
    """

    def __init__(self, pivot_index: int, pivot_value: float):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"matrix is singular to working precision: pivot {pivot_index} "
            f"has magnitude {pivot_value:.3e}"
        )


class NotSymmetricError(ValidationError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class NotPositiveDefiniteError(NumericalError):
    """A factorization found a non-positive leading minor.

    ``minor_index`` is the 0-based index of the first failing pivot, i.e.
    the leading principal minor of order ``minor_index + 1`` is not
    positive.
    """

    def __init__(self, minor_index: int, pivot_value: float):
        self.minor_index = minor_index
        self.pivot_value = pivot_value
        super().__init__(
            f"matrix is not positive definite: leading minor of order "
            f"{minor_index + 1} fails (pivot {pivot_value:.3e})"
        )


class NoSignChangeError(ValidationError):
    """A bracketing root-finder was called without a sign change."""


class DegenerateGapError(ValidationError):
    """A spectral gap has (numerically) zero length."""


class PoleEvaluationError(ValidationError):
    """A rational function was evaluated at (or too close to) one of its poles."""


class WindowError(ValidationError):
    """A block window is too short or badly indexed for the operation."""


class SpectrumProximityError(ValidationError):
    """A requested shift sits too close to the spectrum of an operator."""
