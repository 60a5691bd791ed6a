class IbgenError(Exception):
    """Base class for every error raised by ibgen."""


class ShapeError(IbgenError, ValueError):
    pass


class DomainError(IbgenError, ValueError):
    """An argument lies outside the domain of a formula (e.g. a nonpositive variance)."""


class NonFiniteError(IbgenError, FloatingPointError):
    """A NaN or Inf showed up where a finite number is required."""

    def __init__(self, message, *, where=None):
        super().__init__(message)
        self.where = where


class ConfigError(IbgenError, ValueError):
    pass


class DeskScaleError(ConfigError):
    """Bound evaluation requested outside the small-dimension regime it supports."""


class DataFormatError(IbgenError, ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class RecordLengthError(DataFormatError):
    pass


class CheckpointError(DataFormatError):
    pass
