"""Dataset containers and the estimator result record."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import AllTreatedOrAllControl, EmptyCell


def _column(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _binary(v, name: str) -> np.ndarray:
    v = np.asarray(v)
    if not np.isin(v, (0, 1)).all():
        raise ValueError(f"{name} must be 0/1 valued")
    return v.astype(float)


def _design(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"design matrix must be 2-D with {n} rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("design matrix contains non-finite values")
    if not np.all(x[:, 0] == 1.0):
        raise ValueError("first design column must be the constant 1")
    return x


@dataclass(frozen=True)
class PanelDataset:
    """Per-unit two-period data: outcomes in both periods, treatment, covariates."""

    y0: np.ndarray
    y1: np.ndarray
    d: np.ndarray
    x: np.ndarray
    resamples: int = 0

    def __post_init__(self):
        y0 = _column(self.y0, "y0")
        y1 = _column(self.y1, "y1")
        d = _binary(self.d, "d")
        n = len(y0)
        if len(y1) != n or len(d) != n:
            raise ValueError("y0, y1 and d must have equal length")
        x = _design(self.x, n)
        if d.sum() == 0 or d.sum() == n:
            raise AllTreatedOrAllControl("treatment indicator has a single class")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def delta_y(self) -> np.ndarray:
        return self.y1 - self.y0


@dataclass(frozen=True)
class RcDataset:
    """Pooled repeated cross-sections: one outcome per unit, period indicator t."""

    y: np.ndarray
    t: np.ndarray
    d: np.ndarray
    x: np.ndarray
    resamples: int = 0

    def __post_init__(self):
        y = _column(self.y, "y")
        t = _binary(self.t, "t")
        d = _binary(self.d, "d")
        n = len(y)
        if len(t) != n or len(d) != n:
            raise ValueError("y, t and d must have equal length")
        x = _design(self.x, n)
        for dv in (0, 1):
            for tv in (0, 1):
                if not np.any((d == dv) & (t == tv)):
                    raise EmptyCell(f"cell (d={dv}, t={tv}) is empty")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def lambda_hat(self) -> float:
        return float(self.t.mean())


@dataclass
class AttEstimate:
    """Point estimate with its standard error, interval and diagnostics.

    ``if_values`` holds the per-observation influence values when the SE is
    analytic; it is None when the SE comes from the multiplier bootstrap.
    """

    method: str
    att: float
    se: float
    ci: tuple[float, float]
    level: float = 0.95
    if_values: np.ndarray | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)
