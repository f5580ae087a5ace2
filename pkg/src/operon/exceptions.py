"""Exception hierarchy shared by all operon modules."""


class OperonError(Exception):
    """Base class for every error raised by operon."""


class DimensionError(OperonError, ValueError):
    """Array shapes are incompatible."""


class StateError(OperonError, RuntimeError):
    """An object was used in the wrong lifecycle state."""


class ParameterError(OperonError, ValueError):
    """An argument is outside its valid range."""


class NumericError(OperonError, ArithmeticError):
    """A numerical routine broke down (zero pivot, failed factorization)."""


class SpecError(OperonError, ValueError):
    """A model specification violates its invariants."""


class UsageError(OperonError, TypeError):
    """An operation was applied to the wrong kind of model or input."""


class SearchError(OperonError, ValueError):
    """Parameter-count matching found no acceptable width."""

    def __init__(self, message, closest=None):
        super().__init__(message)
        self.closest = closest


class DivergenceError(OperonError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch, batch, max_abs_param):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.max_abs_param = max_abs_param
