"""Exception hierarchy.

Every error raised by the package derives from :class:`HFOError`. The three
intermediate classes decide the CLI exit code.
"""


class HFOError(Exception):
    exit_code = 1


class ConfigError(HFOError, ValueError):
    exit_code = 2


class DataError(HFOError, ValueError):
    exit_code = 3


class NumericError(HFOError, ArithmeticError):
    exit_code = 4


# eeg_signal
class ZeroVariance(NumericError):
    pass


class InvalidOrder(ConfigError):
    pass


class InvalidCutoff(ConfigError):
    pass


class SignalTooShort(DataError):
    pass


class OutOfBounds(DataError):
    pass


# tf_imaging
class SegmentTooShort(DataError):
    pass


class DegenerateRange(NumericError):
    pass


class SourceTooSmall(DataError):
    pass


class WrongColorSet(DataError):
    pass


# cnn
class DimMismatch(DataError):
    pass


class StaleCache(DataError):
    pass


# training
class ClassTooSmall(DataError):
    pass


class DomainError(NumericError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptySplit(DataError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class TooFewRuns(DataError):
    pass


# synth_data
class TooFewCycles(ConfigError):
    pass


class FormatError(DataError):
    """A file does not follow one of the binary layouts."""
