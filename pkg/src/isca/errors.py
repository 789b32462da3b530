"""Exception hierarchy shared across the package."""


class IscaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IscaError, ValueError):
    pass


class ShapeError(IscaError, ValueError):
    pass


class LengthMismatch(ShapeError):
    pass


class NotCentered(IscaError, ValueError):
    pass


class FormatError(IscaError, ValueError):
    pass


class RankDeficient(IscaError, ArithmeticError):
    pass


class ZeroDiagonal(IscaError, ArithmeticError):
    pass


class IndefiniteKernel(IscaError, ArithmeticError):
    pass


class EmptyDataset(IscaError, ValueError):
    pass


class DimensionMismatch(DimensionError):
    pass


class CalibrationFailed(IscaError, RuntimeError):
    pass


class EmptyCorpus(IscaError, ValueError):
    pass


class LabelOutOfRange(IscaError, ValueError):
    pass


class ChecksumMismatch(IscaError, ValueError):
    pass


class InvariantViolation(IscaError, ValueError):
    pass


class UnsupportedVersion(IscaError, ValueError):
    pass
