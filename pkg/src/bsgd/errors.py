class BSGDError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(BSGDError, ValueError):
    pass


class PartitionError(BSGDError, ValueError):
    pass


class DimensionError(BSGDError, ValueError):
    pass


class ConfigError(BSGDError, ValueError):
    """Raised for malformed experiment configuration text.

    ``line`` is the 1-based line number of the offending entry, or ``None``
    when the problem is not tied to one line (e.g. a missing section).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SizeGuardError(BSGDError, MemoryError):
    pass


class RunError(BSGDError):
    """A solver failure re-raised with the name of the experiment that hit it."""
