"""Exception types raised across the package."""


class SignbipError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SignbipError, ValueError):
    pass


class IndexOutOfRange(SignbipError, IndexError):
    pass


class DuplicateEdge(SignbipError, ValueError):
    pass


class InvalidRatio(SignbipError, ValueError):
    pass


class RankTooLarge(SignbipError, ValueError):
    pass


class MissingFactors(SignbipError, KeyError):
    pass


class EmptyBatch(SignbipError, ValueError):
    pass


class EmptySplit(SignbipError, ValueError):
    pass


class DegenerateLabels(SignbipError, ValueError):
    pass


class EmptyInput(SignbipError, ValueError):
    pass


class TooManyEdges(SignbipError, ValueError):
    pass


class TooLarge(SignbipError, ValueError):
    pass


class NumericFailure(SignbipError, FloatingPointError):
    pass


class DataError(SignbipError):
    """Malformed dataset input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(DataError):
    pass


class InvalidSign(DataError):
    pass


class DuplicatePair(DataError):
    pass
