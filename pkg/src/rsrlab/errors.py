"""Exception types shared across the package."""


class RSRError(Exception):
    """Base class for all rsrlab errors."""


class DimensionError(RSRError, ValueError):
    """Array shapes or image sizes violate an operation's contract."""


class ConfigError(RSRError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class ParseError(ConfigError):
    """A config document line could not be parsed."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class FormatError(RSRError, ValueError):
    """A file does not hold the expected format (PNG, checkpoint, ...)."""


class NumericalError(RSRError, ArithmeticError):
    """A gradient or loss became non-finite."""
