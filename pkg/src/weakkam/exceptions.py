"""Exception types raised by the toolkit.

Numerical failures derive from :class:`NumericalError` so the command line
front end can map them to a single exit status.
"""


class WeakKAMError(Exception):
    def __init__(self, message="", **quantities):
        super().__init__(message)
        self.quantities = quantities


class ValidationError(WeakKAMError, ValueError):
    """Bad configuration or input shape."""


class NumericalError(WeakKAMError, ArithmeticError):
    """A computation ran but its result failed an acceptance check."""


class ReachabilityViolation(ValidationError):
    pass


class DualBoundExceeded(NumericalError):
    pass


class BlowUp(NumericalError):
    pass


class NotPeriodic(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class WindowEmpty(ValidationError):
    pass


class NotStabilized(NumericalError):
    pass


class CalibrationDefect(NumericalError):
    pass


class EmptyCloud(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class NonzeroDrift(ValidationError):
    pass


class AubryHypothesisUnverified(NumericalError):
    pass
