"""Exceptions raised across the pipeline.

Configuration-type problems derive from ValueError and runtime failures from
RuntimeError so the CLI can map them to distinct exit codes.
"""


class ConfigurationError(ValueError):
    """Invalid flag, config key, enum value or missing input."""


class CheckpointError(ConfigurationError):
    """Checkpoint version or tensor shapes do not match the model."""


class EpisodeFormatError(ValueError):
    """Episode file is truncated, corrupt or of an unknown version."""


class GraphInputError(ValueError):
    """Frames handed to graph construction violate its preconditions."""


class CodecError(ValueError):
    """A window cannot be encoded or a packet cannot be decoded."""


class EncodingError(CodecError):
    """A field does not fit its wire width."""


class DecodeError(CodecError):
    """Packet is truncated or corrupt."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedVersionError(CodecError):
    def __init__(self, version: int):
        super().__init__(f"Unsupported packet version: {version}")
        self.version = version


class BudgetExceededError(RuntimeError):
    """Packet is larger than the channel allows."""

    def __init__(self, size: int, budget: int, channel: str):
        super().__init__(
            f"Packet of {size} bytes exceeds the {channel} budget of {budget} bytes"
        )
        self.size = size
        self.budget = budget


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int, detail: str = "non-finite loss or gradient"):
        super().__init__(f"Training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


class InvariantError(AssertionError):
    """A normalization or consistency invariant failed in strict mode."""
