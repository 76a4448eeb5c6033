class AteError(Exception):
    """Base class for errors raised by ateavg."""


class DataError(AteError, ValueError):
    """Invalid or malformed input data."""


class SolverError(AteError, RuntimeError):
    """A numerical solver failed to converge or hit a degenerate problem."""


class SeparationError(SolverError):
    """Logistic fit diverged, typically because the classes are separable."""


class RankDeficientError(SolverError):
    """Design matrix does not have full column rank."""

    def __init__(self, message, collinear=()):
        super().__init__(message)
        self.collinear = list(collinear)


class EstimationError(AteError):
    """A candidate estimator failed on a particular dataset."""

    def __init__(self, method, message):
        super().__init__(f"{method}: {message}")
        self.method = method
