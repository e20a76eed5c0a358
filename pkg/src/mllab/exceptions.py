"""Exception hierarchy shared by all mllab modules."""


class MLLabError(Exception):
    """Base class for every error raised by this package."""


class ZeroVectorError(MLLabError, ValueError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class NonFiniteError(MLLabError, ValueError):
    """An input contained NaN or infinity."""


class DimensionMismatchError(MLLabError, ValueError):
    """Array shapes are inconsistent with each other or with the model."""


class DomainError(MLLabError, ValueError):
    """A scalar argument lies outside its mathematical domain."""


class BatchTooSmallError(MLLabError, ValueError):
    """The operation needs more samples than the batch provides."""


class InvalidConfigError(MLLabError, ValueError):
    """A structural configuration value (size, count, rate) is invalid."""


class InfeasibleSeparationError(MLLabError, RuntimeError):
    """Prototype generation could not satisfy the angular separation floor."""


class RangeError(MLLabError, ValueError):
    """A raw value lies outside its permitted numeric range."""


class ParseError(MLLabError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LabelOutOfRangeError(MLLabError, ValueError):
    """A class label falls outside the declared class count."""


class EpochOutOfRangeError(MLLabError, ValueError):
    """An epoch index lies outside the configured training horizon."""


class InsufficientDataError(MLLabError, ValueError):
    """The dataset cannot supply the requested verification pairs."""


class EmptyInputError(MLLabError, ValueError):
    """An operation received an empty sequence."""


class TooFewPairsError(MLLabError, ValueError):
    """Fewer pairs than cross-validation folds."""


class SeriesTooShortError(MLLabError, ValueError):
    """An accuracy series does not cover the requested epoch window."""


class UnknownLossKindError(MLLabError, ValueError):
    """A loss kind name is not one of the five supported losses."""


class ConfigError(MLLabError, ValueError):
    """An experiment configuration file is malformed; carries the field path."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class NoRunsFoundError(MLLabError, FileNotFoundError):
    """A report was requested from a directory with no completed runs."""
