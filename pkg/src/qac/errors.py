"""Exception types shared across the package."""


class QacError(Exception):
    """Base class for package errors."""


class EmptyCorpusError(QacError):
    """Raised when an operation that needs data receives none."""


class ConfigError(QacError, ValueError):
    """Raised for invalid configuration values."""


class DimensionError(QacError, ValueError):
    """Raised when tensor shapes are inconsistent."""


class UnknownUserError(QacError, KeyError):
    """Raised when a user id does not index a known embedding row."""


class ProtocolError(QacError):
    """Raised when an evaluation precondition is violated (e.g. user overlap)."""


class ArchiveError(QacError):
    """Raised for unreadable, corrupt, or incompatible model archives."""
