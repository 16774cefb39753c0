"""Exception hierarchy shared across gclab modules."""


class GclabError(Exception):
    """Base class for all gclab errors."""


class ConfigurationError(GclabError, ValueError):
    """Invalid configuration values (bad sizes, class counts, ranges)."""


class ValidationError(GclabError, ValueError):
    """Data violates a structural invariant (shape, id set, value range)."""


class StorageError(GclabError, OSError):
    """Dataset or checkpoint I/O failure."""


class LoadError(StorageError):
    """A referenced file is missing or unreadable."""


class NumericError(GclabError, ArithmeticError):
    """A computation produced or received non-finite values."""


class TrainingError(GclabError, RuntimeError):
    """A training step failed; carries the offending term name."""


class PipelineError(GclabError, RuntimeError):
    """A pipeline stage produced invalid intermediate results."""
