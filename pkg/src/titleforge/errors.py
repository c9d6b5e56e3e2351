"""Exception types shared across the toolkit."""


class TitleForgeError(Exception):
    """Base class for all errors raised by this package."""


# --- corpus ---

class DumpParseError(TitleForgeError):
    """Malformed XML in a posts dump; carries the byte offset of the failure."""

    def __init__(self, message, byte_offset, line=None, column=None):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset
        self.line = line
        self.column = column


class NoCodeError(TitleForgeError):
    """Post body contains no usable code block."""


class EmptyDescriptionError(TitleForgeError):
    """Post body has no prose left once code blocks and markup are removed."""


class InsufficientDataError(TitleForgeError):
    """Requested split sizes exceed the available triplets."""


class EmptyCorpusError(TitleForgeError):
    """An operation that needs at least one document got none."""


# --- tokenizer ---

class TargetTooSmallError(TitleForgeError):
    """Requested vocabulary size does not cover the byte alphabet plus specials."""


class UnknownIdError(TitleForgeError):
    """Token id outside the vocabulary."""


class EmptyInputError(TitleForgeError):
    """Model input requested with neither description nor code."""


class InvalidVocabularyFileError(TitleForgeError):
    """Vocabulary file is structurally broken or self-inconsistent."""


# --- tensor ---

class ShapeMismatchError(TitleForgeError):
    """Operand shapes are incompatible for the requested op."""


class NotScalarError(TitleForgeError):
    """backward() requires a scalar loss."""


class TapeClosedError(TitleForgeError):
    """backward() called for a value recorded before the tape was reset."""


class TargetOutOfRangeError(TitleForgeError):
    """Cross-entropy target id is not a valid vocabulary index."""


class EmptyTargetError(TitleForgeError):
    """Cross-entropy batch contains only padding positions."""


# --- model ---

class LengthExceededError(TitleForgeError):
    """Sequence longer than the configured maximum."""


class DegenerateMaskError(TitleForgeError):
    """Attention mask leaves some query with no visible key."""


# --- training ---

class WrongArityError(TitleForgeError):
    """Multi-task loss needs exactly one loss per task."""


class MissingGradError(TitleForgeError):
    """Optimizer stepped a parameter whose gradient was never populated."""


class MissingTaskError(TitleForgeError):
    """Training requires a non-empty corpus for every task."""


# --- evaluation ---

class LengthMismatchError(TitleForgeError):
    """Candidate and reference lists differ in length."""


class EmptyListError(TitleForgeError):
    """Corpus-level scoring got empty lists."""


class EmptyTestSetError(TitleForgeError):
    """Evaluation requested on an empty test split."""
