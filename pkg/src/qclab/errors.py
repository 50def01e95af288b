"""Exception hierarchy shared by the library modules."""


class QCLabError(Exception):
    """Base class for all library errors."""


class NonPositiveDeterminant(QCLabError, ValueError):
    pass


class EvaluationDomainError(QCLabError, ValueError):
    pass


class DegenerateGradient(QCLabError, ValueError):
    pass


class KappaTooLarge(QCLabError, ValueError):
    pass


class NotConverged(QCLabError, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CoefficientMismatch(QCLabError, ValueError):
    pass


class PreconditionViolated(QCLabError, ValueError):
    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst or []


class InsufficientTrace(QCLabError, ValueError):
    pass


class GridFormatError(QCLabError, ValueError):
    pass


class TargetOutsideImage(QCLabError, ValueError):
    """Raised when no requested target lies inside the image of the map."""


class NewtonDiverged(QCLabError, RuntimeError):
    """Raised when inversion fails for every target."""
