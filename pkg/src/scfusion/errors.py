"""Exception hierarchy shared by every module."""


class ScfError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ScfError, ValueError):
    """Inconsistent shapes or parameter values."""


class InputError(ScfError, ValueError):
    """Malformed data: files, stimuli, datasets."""


class TrainingError(ScfError, RuntimeError):
    """Numerical failure during optimisation (non-finite loss etc.)."""
