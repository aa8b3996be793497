"""Exception hierarchy shared by every module of the package."""


class SplineNetError(Exception):
    """Base class for all package errors."""


class DataError(SplineNetError, ValueError):
    """Malformed input data."""


class InvalidSeries(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotoneTimes(ParseError):
    pass


class ClassTooSmall(DataError):
    pass


class NoDistanceKernels(DataError):
    pass


class OutOfRange(SplineNetError, ValueError):
    pass


class SpanMismatch(SplineNetError, ValueError):
    pass


class DimensionMismatch(SplineNetError, ValueError):
    pass


class EmptyBatch(SplineNetError, ValueError):
    pass


class LabelOutOfRange(SplineNetError, ValueError):
    pass


class SingleClassAUC(SplineNetError, ValueError):
    pass


class NumericalError(SplineNetError, ArithmeticError):
    """Numerical failure: degree blow-up or non-finite values."""


class DegreeCapError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass
