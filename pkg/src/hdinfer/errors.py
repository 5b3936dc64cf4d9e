"""Exception hierarchy shared by all inference routines."""


class HdiError(Exception):
    """Base class for errors raised by hdinfer."""


class DataError(HdiError, ValueError):
    """Invalid input data (shape, non-finite values, constant columns)."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class ConfigurationError(HdiError, ValueError):
    """Inconsistent or out-of-range tuning parameters."""


class ConvergenceError(HdiError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, gap=float("nan"), iterations=0):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class DegenerateFitError(HdiError, RuntimeError):
    """The fit interpolates the data or a projection collapses to zero."""


class RankError(HdiError, ValueError):
    """Design matrix is rank deficient."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class MethodFailure(HdiError, RuntimeError):
    """An inference method could not produce a result."""
