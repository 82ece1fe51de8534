"""Exception hierarchy. CLI exit codes key off these classes."""


class QuenchLocError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(QuenchLocError, ValueError):
    """Input violates a documented precondition (exit code 2)."""


class GeometryError(ValidationError):
    """Geometric configuration is invalid, e.g. a ball intersecting the patch."""


class NumericalError(QuenchLocError, ArithmeticError):
    """A numerical stage failed to produce a trustworthy answer (exit code 3)."""


class ConvergenceError(NumericalError):
    """Adaptive quadrature hit its subdivision cap.

    Attributes
    ----------
    estimate : float
        Best value reached before giving up.
    error : float
        Error estimate attached to ``estimate``.
    """

    def __init__(self, message, estimate=float("nan"), error=float("inf")):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


class InconsistentSignError(NumericalError):
    """Indicator values change sign inside a fit window."""
