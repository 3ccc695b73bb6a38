"""Exception types shared across the package."""


class SwastError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SwastError, ValueError):
    """An argument value or array shape is outside the documented domain."""


class InvalidStateError(SwastError, RuntimeError):
    """An object is used in a way its current state does not permit."""


class ConfigError(SwastError, ValueError):
    """A configuration file or option set is malformed or inconsistent."""


class FormatError(SwastError, ValueError):
    """A binary file does not match the expected layout.

    Carries the byte offset at which the mismatch was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    """A checkpoint declares a format version this build cannot read."""


class CorruptionError(FormatError):
    """A checkpoint payload fails its integrity check."""


class DivergenceError(SwastError, RuntimeError):
    """Training produced a non-finite loss or weight."""
