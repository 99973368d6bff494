"""Exception types mapped onto the CLI exit-code contract."""


class KforgeError(Exception):
    """Base class for package errors."""


class ValidationError(KforgeError):
    """Bad parameters or inconsistent inputs (exit code 1)."""


class MissingInputError(KforgeError):
    """A required file or directory does not exist (exit code 2)."""


class NumericalError(KforgeError):
    """A computation produced non-finite or degenerate results (exit code 3)."""


class FormatError(KforgeError):
    """Malformed binary file: bad magic, version, or declared sizes."""


class ChecksumError(FormatError):
    """Payload bytes do not match their recorded CRC32."""
