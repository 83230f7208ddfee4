"""Exception hierarchy shared across the toolkit.

``DataError`` subclasses signal bad input data (CLI exit code 2),
``TrainingDiverged`` signals a non-finite loss (exit code 3).
"""


class SeisrganError(Exception):
    """Base class for all toolkit errors."""


class DataError(SeisrganError, ValueError):
    """Input data violates a format or contract."""


class MalformedHeader(DataError):
    pass


class CountMismatch(DataError):
    pass


class NonNumericValue(DataError):
    pass


class ChannelMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyRecord(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class MetadataMismatch(DataError):
    pass


class OutOfRange(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ChannelNotDivisible(ShapeMismatch):
    pass


class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class WindowTooLarge(DataError):
    pass


class WeightsUnavailable(SeisrganError):
    """Pretrained feature-extractor weights could not be loaded.

    Callers are expected to fall back to training without the content term.
    """


class TrainingDiverged(SeisrganError, ArithmeticError):
    pass


class NonFiniteLoss(TrainingDiverged):
    """A loss evaluated to NaN or infinity.

    ``checkpoint`` holds the directory of the last good checkpoint (or None)
    and ``history`` the epochs completed before divergence, when raised from
    the training loop.
    """

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history
