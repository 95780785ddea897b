"""Exception types shared across the package."""


class NerError(Exception):
    """Base class for all errors raised by this package."""


class OverlapError(NerError):
    """Two spans in one annotation layer overlap."""


class RangeError(NerError):
    """A span or position falls outside its sentence."""


class UnknownLabelError(NerError):
    """A span label is not part of the label scheme."""


class ParseError(NerError):
    """A file failed to parse; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantError(NerError):
    """Loaded data violates a structural invariant and repair is disabled."""


class EmptyDictionaryError(NerError):
    """A matcher cannot be built from an empty dictionary."""


class ShapeMismatchError(NerError):
    """An emission table does not match the expected sentence/tag shape."""


class InvalidGoldError(NerError):
    """A gold tag sequence violates the transition constraint mask."""


class InfeasibleError(NerError):
    """The constraint mask admits no valid tag sequence."""


class VersionError(NerError):
    """A model file declares an unsupported format version."""


class CorruptionError(NerError):
    """A model file is truncated or fails its checksum."""


class DivergenceError(NerError):
    """Training loss became non-finite."""


class DataError(NerError):
    """A dataset is empty or missing a required layer."""


class UnknownSentenceError(NerError):
    """A record references a sentence id absent from the dataset."""


class ConfigError(NerError):
    """A configuration value is invalid."""


class IdMismatchError(NerError):
    """Two span layers do not cover the same sentence ids."""


class EmptyCorpusError(NerError):
    """A benchmark corpus contains no sentences."""


class BindError(NerError):
    """The review server could not bind its address."""


class StoreCorruptionError(NerError):
    """The disagreement store contains a malformed non-trailing record."""
