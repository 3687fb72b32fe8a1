"""Exception hierarchy shared by every module."""


class JeclError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(JeclError, ValueError):
    """Invalid shapes, hyperparameters or command options."""


class StateError(JeclError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class TrainingError(JeclError, RuntimeError):
    """Non-finite values appeared during optimization."""


class DataError(JeclError, ValueError):
    """Malformed, inconsistent or out-of-range input data."""
