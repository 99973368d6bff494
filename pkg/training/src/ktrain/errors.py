"""Error taxonomy mirroring the dataset producer's exit-code conventions."""


class KtrainError(Exception):
    """Base class for this package's failures."""


class FormatError(KtrainError):
    """A .kfrg file or manifest is structurally invalid."""


class ChecksumError(FormatError):
    """Stored CRC does not match the bytes read."""


class ValidationError(KtrainError):
    """A config value or argument is out of contract."""


class MissingInputError(KtrainError):
    """A required file or directory does not exist."""


class NumericalError(KtrainError):
    """Training diverged or produced non-finite values."""
