"""Exception hierarchy shared across the package."""


class TVSDError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeError(TVSDError, ValueError):
    pass


class NumericError(TVSDError, ArithmeticError):
    pass


class ConfigError(TVSDError, ValueError):
    pass


class DatasetError(TVSDError):
    pass


class StructuralError(DatasetError):
    """Dataset directory layout is missing or malformed."""


class PairingError(DatasetError):
    """An image has no matching mask (or the other way around)."""

    def __init__(self, message: str, path=None):
        super().__init__(message)
        self.path = path


class SamplingError(DatasetError):
    pass


class CheckpointError(TVSDError):
    pass


class TrainingError(TVSDError):
    pass
