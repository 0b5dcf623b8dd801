"""Exception types shared across the package."""


class MsntError(Exception):
    """Base class for all msnt errors."""


class ShapeError(MsntError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(MsntError):
    """An operation was called outside its contract (non-shape)."""


class ConfigError(MsntError):
    """A configuration value violates its invariants."""


class DataError(MsntError):
    """Input data is malformed. ``problems`` lists the offending records."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else []


class CheckpointError(MsntError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ended before all declared blocks were read."""


class VocabHashError(CheckpointError):
    """Checkpoint was written against a different vocabulary file."""


class AugmentationError(MsntError):
    """An augmentation back end failed; carries the untouched input example."""

    def __init__(self, message, example=None):
        super().__init__(message)
        self.example = example


class UsageError(MsntError):
    """Command line was invalid."""
