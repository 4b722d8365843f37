"""Exception types shared across the toolkit."""


class FiberDetError(Exception):
    """Base class for toolkit errors."""


class InvalidArgument(FiberDetError, ValueError):
    """A value is outside the domain of an operation."""


class InsufficientData(FiberDetError, ValueError):
    """Too few samples to compute a statistic."""


class ConfigError(FiberDetError, ValueError):
    """A configuration cannot be satisfied."""


class DataError(FiberDetError):
    """Malformed or inconsistent input files."""
