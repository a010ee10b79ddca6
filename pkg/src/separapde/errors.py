"""Exception types raised by the solvers and file readers."""


class SeparaError(Exception):
    """Base class for all library errors."""


class InvalidRangeError(SeparaError, ValueError):
    pass


class UnsupportedSourceError(SeparaError, TypeError):
    """Source is neither a separated sum nor a set of point loads."""


class IncompatibleDomainError(SeparaError, ValueError):
    pass


class SingularDirectionError(SeparaError, ArithmeticError):
    """A frozen factor in the alternating-direction solve is numerically zero."""


class NonFiniteGradientError(SeparaError, FloatingPointError):
    pass


class DegenerateElementError(SeparaError, ValueError):
    pass


class PointOutsideReferenceError(SeparaError, ValueError):
    pass


class FormatError(SeparaError, ValueError):
    """Malformed serialized solution or domain file."""
