"""Exception hierarchy shared across the package."""


class RobustDidError(Exception):
    """Base class for all estimation and data errors raised by this package."""


class NotPositiveDefinite(RobustDidError):
    """A Gram/Hessian matrix failed the Cholesky pivot test (collinearity)."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class MaxIterationsExceeded(RobustDidError):
    """Newton iterations exhausted without meeting the gradient tolerance."""


class HessianSingular(RobustDidError):
    """Objective returned a non-finite or unusable Hessian."""


class Separation(RobustDidError):
    """Logit fit diverged or pinned fitted probabilities to {0, 1}."""


class ObjectiveUnbounded(Separation):
    """Tilting objective ran into the exp overflow clamp (separation)."""


class AllTreatedOrAllControl(RobustDidError):
    """Treatment indicator has a single class; no fit is possible."""


class InsufficientSubsample(RobustDidError):
    """Selected subsample too small for the requested regression."""


class ExtremePropensity(RobustDidError):
    """A control unit's fitted propensity is numerically at 1."""


class MissingLinearization(RobustDidError):
    """First-step fit lacks the linearization vectors needed for inference."""


class MomentConditionError(RobustDidError):
    """Internal moment-vector check failed at a converged fit."""


class EmptyCell(RobustDidError):
    """A (treatment, period) cell required by the estimand is empty."""


class DegenerateTreatment(RobustDidError):
    """Simulated draw produced a single-class treatment vector."""


class SimulationFailure(RobustDidError):
    """Per-replication failure rate exceeded the abort threshold."""


class DataError(RobustDidError):
    """Base class for CSV ingestion problems."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = ""
        if row is not None:
            loc += f" (row {row}"
            loc += f", column {column})" if column is not None else ")"
        elif column is not None:
            loc += f" (column {column})"
        super().__init__(message + loc)
        self.row = row
        self.column = column


class DuplicateId(DataError):
    pass


class MissingColumn(DataError):
    pass
