"""Exception types shared across the package."""


class MiximputeError(Exception):
    """Base class for all package errors."""


class ValidationError(MiximputeError):
    """Bad user input: shapes, kinds, ranges, config keys."""


class NumericalError(MiximputeError):
    """Numerical failure that survived the jitter retry (non-SPD matrix etc.)."""
