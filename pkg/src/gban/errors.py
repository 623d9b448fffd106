"""Exception types shared across the package."""


class GbanError(Exception):
    """Base class for all package errors."""


class ShapeError(GbanError, ValueError):
    """Operand dimensions do not agree."""


class SequenceTooShortError(GbanError, ValueError):
    """A sequence is shorter than the window an operation needs."""


class EmptySequenceError(GbanError, ValueError):
    """An operation received zero elements where at least one is required."""


class ContractError(GbanError, ValueError):
    """A precondition on arguments was violated."""


class NumericFaultError(GbanError, ArithmeticError):
    """Non-finite values were found where finite ones are required."""

    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


class AudioFileMissingError(GbanError, FileNotFoundError):
    pass


class MalformedWavError(GbanError, ValueError):
    pass


class UnsupportedEncodingError(GbanError, ValueError):
    pass


class EmbeddingFormatError(GbanError, ValueError):
    pass


class ConfigError(GbanError, ValueError):
    pass


class ManifestError(GbanError, ValueError):
    pass


class CheckpointError(GbanError, ValueError):
    pass
