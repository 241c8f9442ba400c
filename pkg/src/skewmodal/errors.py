"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SkewModalError(Exception):
    """Base class for all library errors."""


class DomainError(SkewModalError, ValueError):
    """A parameter value lies outside the model's admissible set."""


class DataError(SkewModalError, ValueError):
    """A data set violates the model's response/covariate contract."""


class UnsupportedOrder(SkewModalError):
    """The requested derivative order is unavailable."""


class NonFiniteEvaluation(SkewModalError, FloatingPointError):
    """A finite-difference stencil point produced a non-finite value."""


class NotConverged(SkewModalError):
    """Newton iteration stopped before reaching the gradient tolerance.

    The best point found so far is attached as ``result``.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class IndefiniteHessian(SkewModalError, ArithmeticError):
    """Observed information is not positive definite."""


class IndefinitePrecision(SkewModalError, ArithmeticError):
    """The corrected precision of the theoretical approximation is not positive definite."""


class BadIndexSet(SkewModalError, ValueError):
    """Marginal index set is empty, out of range or has duplicates."""


class ResolutionExceeded(SkewModalError):
    """Quadrature refinement hit its cap before meeting the tolerance."""


class EmptyReference(SkewModalError, ValueError):
    """No reference draws were supplied."""


class UnsupportedModel(SkewModalError, ValueError):
    """No closed-form posterior exists for this model/data combination."""


class PreconditionFailed(SkewModalError):
    """A sample-size or constant condition of the TV bound does not hold."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class MetricMissing(SkewModalError, KeyError):
    """A study report lacks the metric/approximation pair requested."""
