"""Exception types raised by the library."""


class InvalidRequestError(ValueError):
    """Arguments are inconsistent with the objects they refer to."""


class InvalidCoefficientError(ValueError):
    """A coefficient violates positivity, ellipticity or periodicity."""


class InvalidOperatorError(ValueError):
    """A linear operator cannot be used as requested (e.g. bad diagonal)."""


class NumericalBreakdownError(ArithmeticError):
    """Non-finite values appeared during an iterative solve."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""


class InconsistencyError(RuntimeError):
    """Computed moments contradict each other beyond roundoff."""
