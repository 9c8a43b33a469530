"""Exception hierarchy shared across the package.

Plain bad arguments (wrong shapes, out-of-range scalars) raise the builtin
``ValueError``; everything below marks a *domain* failure that callers may
want to catch selectively.
"""


class ChanceDiffError(Exception):
    """Base class for all domain errors raised by this package."""


class StateError(ChanceDiffError):
    """An object was asked to do something its current state cannot support."""


class InfeasibleRestrictionError(ChanceDiffError):
    """The deterministic restricted problem has an empty feasible set."""


class IllPosedError(ChanceDiffError):
    """A problem is numerically ill-posed (e.g. singular curvature matrix)."""


class InfeasibleInstanceError(ChanceDiffError):
    """The analytic feasible set of the instance is empty."""


class SingularityError(ChanceDiffError):
    """A matrix that must be positive definite is not."""


class NumericalError(ChanceDiffError):
    """A numerical routine failed to reach its advertised accuracy."""


class DivergenceError(ChanceDiffError):
    """Reverse sampling produced a non-finite or runaway state."""

    def __init__(self, message: str, step: int | None = None, beta: float | None = None):
        super().__init__(message)
        self.step = step
        self.beta = beta


class TrainingDivergedError(ChanceDiffError):
    """Training loss became non-finite."""

    def __init__(self, message: str, step: int | None = None, learning_rate: float | None = None):
        super().__init__(message)
        self.step = step
        self.learning_rate = learning_rate
