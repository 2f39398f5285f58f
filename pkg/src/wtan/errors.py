"""Exception hierarchy shared by all modules."""


class WtanError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(WtanError):
    pass


class MarginalMismatch(WtanError):
    pass


class BaseMismatch(WtanError):
    pass


class SolverFailure(WtanError):
    pass


class NonConvergence(SolverFailure):
    pass


class TooLarge(WtanError):
    pass


class NonRationalWeights(WtanError):
    pass


class NonFiniteField(WtanError):
    pass


class MissingVelocities(WtanError):
    pass


class ZeroCost(WtanError):
    pass


class GridMismatch(WtanError):
    pass


class BudgetExhausted(WtanError):
    """Raised only when a caller asks for strict budget semantics."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ValidationError(WtanError):
    """Malformed input (JSON schema or domain-type invariant)."""
