"""Exception hierarchy shared by every layer of the package."""


class LpplError(Exception):
    """Base class for all errors raised by :mod:`lpplci`."""


class DomainError(LpplError, ValueError):
    """Raised when the model is evaluated at or beyond the critical time."""


class SingularSystemError(LpplError, ArithmeticError):
    """Raised when the 4x4 Gram matrix of the linear subproblem is rank-deficient."""

    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


class WindowTooShortError(LpplError, ValueError):
    """Raised when a fitting window holds too few observations."""


class FitFailedError(LpplError):
    """Raised when no start of a multi-start search produced a finite cost."""


class InsufficientHistoryError(LpplError, ValueError):
    """Raised when not even the shortest scheduled window fits before ``t2``."""


class DataError(LpplError, ValueError):
    """Raised for malformed price input."""


class MalformedHeaderError(DataError):
    pass


class UnparseableDateError(DataError):
    pass


class NonIncreasingDatesError(DataError):
    pass


class TooFewRowsError(DataError):
    pass
