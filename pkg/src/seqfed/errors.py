"""Exception types shared across the package."""


class SeqFedError(Exception):
    """Base class for all seqfed errors."""


class DimensionMismatchError(SeqFedError):
    """Raised when array shapes disagree; names the offending axis."""

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch on {axis}: expected {expected}, got {got}")


class EmptyDataError(SeqFedError):
    """Raised when an operation receives an empty batch, split or dataset."""


class ConfigError(SeqFedError):
    """Raised on configuration problems; carries the offending key path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class PartitionError(SeqFedError):
    """Raised when a client partition cannot be constructed as requested."""


class IdxFormatError(SeqFedError):
    """Base class for IDX file parsing failures."""


class IdxMagicError(IdxFormatError):
    """IDX file begins with an unexpected magic number."""


class IdxTruncatedError(IdxFormatError):
    """IDX file ends before the declared payload."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files declare different record counts."""
