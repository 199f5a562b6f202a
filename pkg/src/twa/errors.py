"""Exception hierarchy shared by every module in the package."""


class TwaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TwaError, ValueError):
    pass


class GroupIndexError(TwaError, IndexError):
    pass


class NumericError(TwaError, ArithmeticError):
    pass


class InputError(TwaError, ValueError):
    pass


class EmptyInputError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class StorageError(TwaError, OSError):
    pass


class CheckpointValidationError(TwaError, ValueError):
    """A manifest or checkpoint file failed validation."""

    def __init__(self, message: str, path=None):
        super().__init__(message)
        self.path = path


class MissingCheckpointError(CheckpointValidationError):
    pass


class CorruptCheckpointError(CheckpointValidationError):
    pass


class BadMagicError(CorruptCheckpointError):
    pass


class TruncatedCheckpointError(CorruptCheckpointError):
    pass


class DimensionMismatchError(CheckpointValidationError):
    pass
