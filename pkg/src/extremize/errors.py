"""Exception hierarchy shared by all modules."""


class ExtremizeError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(ExtremizeError, ValueError):
    pass


class DeltaOutOfRange(ExtremizeError, ValueError):
    pass


class NotPositiveSemidefinite(ExtremizeError, ValueError):
    def __init__(self, min_eigenvalue: float, message: str | None = None):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            message
            or f"covariance is not positive semidefinite (min eigenvalue {self.min_eigenvalue:.3e})"
        )


class SingularStructure(ExtremizeError, ValueError):
    pass


class CholeskyFailure(ExtremizeError, RuntimeError):
    pass


class EmptyPanel(ExtremizeError, ValueError):
    pass


class NegativeBeta(ExtremizeError, ValueError):
    pass


class DegenerateDesign(ExtremizeError, ValueError):
    pass


class TooManyBins(ExtremizeError, ValueError):
    pass


class TooFewPoints(ExtremizeError, ValueError):
    pass


class TooFewRows(ExtremizeError, ValueError):
    pass


class RankDeficientDesign(ExtremizeError, ValueError):
    pass


class IndexOutOfRange(ExtremizeError, IndexError):
    pass


class DatasetFormatError(ExtremizeError, ValueError):
    pass


class ParseError(ExtremizeError, ValueError):
    pass


class ConfigError(ExtremizeError, ValueError):
    pass


class QpFailure(ExtremizeError, RuntimeError):
    """Raised when the QP solver cannot certify a solution.

    ``problem`` and ``solution`` (the best iterate, possibly ``None``) are kept
    so callers can dump them for debugging.
    """

    def __init__(self, message: str, problem=None, solution=None):
        super().__init__(message)
        self.problem = problem
        self.solution = solution


class MaxIterationsExceeded(QpFailure):
    pass


class InfeasibleConstraint(QpFailure):
    pass
