class GmlError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(GmlError, ValueError):
    pass


class AutogradError(GmlError):
    pass


class MissingGradientError(AutogradError):
    pass


class DivergenceError(AutogradError):
    """A loss or gradient stopped being finite."""


class LabelError(GmlError, ValueError):
    pass


class UndefinedMetricError(GmlError, ValueError):
    pass


class FormatError(GmlError):
    """A tensor or checkpoint file is not well formed."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class StorageError(GmlError, OSError):
    pass


class UsageError(GmlError):
    """Command-line misuse; ``usage`` is the synopsis of the offending command."""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage
