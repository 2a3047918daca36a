"""Exception types shared across the package."""


class MtscsError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MtscsError, ValueError):
    """A tensor or matrix has a shape incompatible with the operation."""


class ConfigError(MtscsError, ValueError):
    """A run configuration is malformed or internally inconsistent."""


class FormatError(MtscsError, ValueError):
    """A binary file has a bad magic number, version, or payload."""


class TrainingError(MtscsError, RuntimeError):
    """Training cannot continue (for example, non-finite gradients)."""
