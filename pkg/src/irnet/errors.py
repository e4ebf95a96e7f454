"""Exception hierarchy shared by every irnet module."""


class IRNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(IRNetError, ValueError):
    """Tensor shape/layout violated an operation's contract."""

    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ConfigError(IRNetError, ValueError):
    """Invalid model/training/CLI configuration."""


class TapeError(IRNetError, RuntimeError):
    """Misuse of a gradient tape (e.g. replaying a consumed tape)."""


class NumericsError(IRNetError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(IRNetError, ValueError):
    """Malformed, truncated, or incompatible checkpoint/cache file."""


class ImageFormatError(IRNetError, ValueError):
    """Image file failed to decode or has the wrong depth/channel layout."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ManifestError(IRNetError, ValueError):
    """Dataset manifest is malformed or references unusable files."""
