"""Exception hierarchy shared by every seld_einv2 module."""


class SeldError(Exception):
    """Base class for all errors raised by seld_einv2."""


class DimensionError(SeldError, ValueError):
    """Tensor shapes do not agree for the requested operation."""


class ConfigError(SeldError, ValueError):
    """A configuration value is invalid or inconsistent with the data."""


class FormatError(SeldError, ValueError):
    """An input file or array does not have the expected layout."""


class ContractError(SeldError, ValueError):
    """A caller broke the contract of an operation (e.g. non-scalar loss)."""


class CheckpointError(SeldError):
    """A checkpoint is unreadable or does not belong to the model."""


class TrainingDiverged(SeldError):
    """Too many consecutive optimizer steps had non-finite gradients."""
