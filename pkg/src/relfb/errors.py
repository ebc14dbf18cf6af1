"""Exception types shared across the package."""


class RelfbError(Exception):
    """Base class for all package errors."""


class FormatError(RelfbError):
    """Malformed WAV header or otherwise unparseable file."""


class UnsupportedFormat(RelfbError):
    """Parseable file with an encoding we do not handle (multichannel, not 16-bit, ...)."""


class InsufficientSamples(RelfbError):
    """Signal too short for the requested framing."""


class ShapeError(RelfbError):
    """Array shapes inconsistent with the operation's contract."""


class NumericalError(RelfbError):
    """Non-finite value produced by a compute op."""


class ConfigError(RelfbError):
    """Invalid or inconsistent model/corpus configuration."""


class TrainingDiverged(RelfbError):
    """Loss became non-finite or exceeded the divergence guard."""

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class EmptySplit(RelfbError):
    """Evaluation requested on a split with no patches."""


class EmptyInput(RelfbError):
    """Bootstrap table with no items."""


class NotApplicable(RelfbError):
    """Requested analysis does not apply to this model configuration."""
