"""Exception types raised across the engine."""


class DimensionError(ValueError):
    """Tensor extents do not fit an operation."""


class ConfigurationError(ValueError):
    """A configuration value is out of range or inconsistent."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class DegenerateVarianceError(DimensionError):
    """Batch statistics are undefined for a single element per channel."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf appeared in a loss or gradient."""


class DataError(RuntimeError):
    """Dataset layout or image decoding problem."""


class CheckpointError(RuntimeError):
    """Checkpoint cannot be read or does not fit the target model."""


class IntegrityError(CheckpointError):
    """Checkpoint bytes fail a length or checksum test."""


class FormatVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""
