"""Exception hierarchy shared across the codec.

Exit codes used by the CLI: 0 success, 2 configuration, 3 data/format,
4 capacity.
"""


class CodecError(Exception):
    """Base class for all codec errors."""

    exit_code = 1


class ConfigurationError(CodecError):
    """Invalid configuration (bad bounds, missing model, bad hyperparameters)."""

    exit_code = 2


class DimensionError(CodecError):
    """Tensor shape does not match the declared configuration."""

    exit_code = 3


class DataFormatError(CodecError):
    """Malformed file, header, or stream."""

    exit_code = 3


class CorruptionError(DataFormatError):
    """Checksum mismatch on a coded payload."""


class TruncationError(DataFormatError):
    """Payload exhausted before all symbols were decoded."""


class NumericError(CodecError):
    """Non-finite values or integer overflow in numeric inputs."""

    exit_code = 3


class LadderError(CodecError):
    """Quantization level outside the configured ladder."""

    exit_code = 2


class PrecisionError(CodecError):
    """PMF table cannot satisfy the minimum-frequency constraint."""

    exit_code = 2


class CoderRangeError(CodecError):
    """Symbol outside its channel's table range (upstream bug, never silent)."""

    exit_code = 3


class CapacityError(CodecError):
    """No quantization level fits the requested rate budget."""

    exit_code = 4


class DivergenceError(CodecError):
    """Training loss became non-finite."""

    exit_code = 2
