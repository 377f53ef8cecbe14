"""Exception hierarchy shared by every module."""


class TrackingError(Exception):
    """Base class for all errors raised by topictrack."""


class ContractViolation(TrackingError):
    """A caller broke a precondition (shape mismatch, out-of-order frames)."""


class InvalidEmbeddingError(TrackingError, ValueError):
    pass


class EmptyGalleryError(TrackingError):
    pass


class ConfigError(TrackingError, ValueError):
    """Configuration missing, unknown or out of range.

    ``key`` names the offending setting when there is one.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DataError(TrackingError):
    """Input data is malformed or inconsistent."""


class MotParseError(DataError):
    """A MOT-format or sidecar line could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class EmptyReportError(TrackingError, ValueError):
    """A statistic was requested over no data."""
