"""Exception types shared across the package."""


class MMBrowseError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MMBrowseError):
    """Numeric or structural input violates a precondition."""


class ShapeError(InvalidInputError):
    """Array dimensions do not match the declared shapes."""


class DegenerateInputError(MMBrowseError):
    """Input is well-formed but degenerate, e.g. a zero-norm vector."""


class ConfigError(MMBrowseError):
    """Invalid configuration value."""


class UnknownTokenError(MMBrowseError):
    """Query token not present in the vocabulary."""


class InvalidQueryError(MMBrowseError):
    """Query is empty or carries no usable constraint."""


class ParseError(MMBrowseError):
    """A persisted file failed validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(MMBrowseError):
    """Dialog protocol violated, e.g. a click on a product that was not displayed."""


class DataError(MMBrowseError):
    """Dataset references a product or token missing from the catalog."""


class TrainingError(MMBrowseError):
    """Training diverged (non-finite loss)."""
