"""Exception hierarchy shared by every module.

Validation-type errors (bad values, bad shapes, bad file content) derive
from ValidationError; I/O-level integrity failures (missing, truncated, or
corrupted files) are separate so the CLI can map them to distinct exit
codes.
"""


class PolyintentError(Exception):
    """Base class for all library errors."""


class ValidationError(PolyintentError):
    """A precondition on values, shapes, or configuration was violated."""


class ShapeError(ValidationError):
    """Operands have incompatible or unexpected shapes."""


class BatchTooSmallError(ValidationError):
    """An operation that needs at least two rows got fewer."""


class DegenerateRankError(ValidationError):
    """Input matrix has lower numerical rank than the operation requires."""

    def __init__(self, message, achieved_rank=None, requested=None):
        super().__init__(message)
        self.achieved_rank = achieved_rank
        self.requested = requested


class DataFormatError(ValidationError):
    """A data file has invalid content; carries a 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EpisodeError(ValidationError):
    """A few-shot episode cannot be sampled from the given dataset."""


class NumericalInstabilityError(PolyintentError):
    """A computation produced NaN or Inf; the message names the operation."""


class CheckpointError(PolyintentError):
    """Base class for checkpoint persistence failures."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint bytes are truncated or fail their integrity checksum."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint declares a format version this build does not know."""
