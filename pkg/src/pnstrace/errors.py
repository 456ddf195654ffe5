"""Exception types raised across the package."""


class PnSError(Exception):
    """Base class for all package errors."""


class MissingTarget(PnSError, ValueError):
    pass


class EmptyGrid(PnSError, ValueError):
    pass


class ParseError(PnSError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonNumericCoordinate(ParseError):
    pass


class UnknownSubset(PnSError, KeyError):
    pass


class ShapeMismatch(PnSError, ValueError):
    pass


class AllMasked(PnSError, ValueError):
    pass


class KExceedsM(PnSError, ValueError):
    pass


class Divergence(PnSError, FloatingPointError):
    pass


class ConfigError(PnSError, ValueError):
    pass
