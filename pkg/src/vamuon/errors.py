"""Exception types shared across the package."""


class VamuonError(Exception):
    """Base class for all package errors."""


class NonFiniteError(VamuonError, ValueError):
    pass


class ShapeMismatchError(VamuonError, ValueError):
    pass


class DimensionLimitError(VamuonError, ValueError):
    pass


class DegenerateInputError(VamuonError, ValueError):
    """Raised when a matrix is too close to rank deficient for an exact polar factor."""


class ZeroInputError(VamuonError, ValueError):
    """Raised by Newton-Schulz on an all-zero matrix. Callers usually skip the update."""


class ConfigError(VamuonError, ValueError):
    pass


class NumericalFailure(VamuonError, RuntimeError):
    """A run produced a non-finite loss or gradient. `records` holds what was logged."""

    def __init__(self, message: str, records=None):
        super().__init__(message)
        self.records = list(records or [])
