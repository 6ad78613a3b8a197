"""Exception hierarchy shared across the package."""


class ASAEError(Exception):
    """Base class for all package errors."""


class DimensionError(ASAEError, ValueError):
    """An array does not have the shape a layer or encoding expects."""


class CapacityError(ASAEError, ValueError):
    """An exact enumeration would exceed the configured size limit."""


class DataError(ASAEError, ValueError):
    """Trajectory data is inconsistent with what an operation needs."""


class TrainingError(ASAEError, RuntimeError):
    """A non-finite value appeared during optimization."""


class ConfigError(ASAEError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")

