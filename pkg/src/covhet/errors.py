"""Exception types shared across the package."""


class CovhetError(Exception):
    """Base class for package errors."""


class ConfigError(CovhetError, ValueError):
    """Invalid configuration or argument values."""


class DataError(CovhetError):
    """Malformed, missing or inconsistent data."""


class NumericalError(CovhetError, ArithmeticError):
    """A solver produced non-finite values or failed to converge."""
