"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DataError(ValueError):
    """An on-disk record or user-supplied annotation is invalid."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, corrupted, or version-mismatched."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss and was aborted."""
