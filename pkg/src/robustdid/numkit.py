"""Dense numerical kernel: SPD solves, weighted least squares, damped Newton.

Every system solved in this package is a small Gram or Hessian matrix, so a
hand-rolled Cholesky with an explicit pivot tolerance gives precise control
over how collinearity is detected and reported. Reductions rely on numpy's
pairwise summation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import HessianSingular, MaxIterationsExceeded, NotPositiveDefinite

PIVOT_RTOL = 1e-12
MAX_HALVINGS = 30


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def cholesky_spd(a, *, pivot_rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when a pivot falls at or below
    ``pivot_rtol * max(diag)``, which is how collinear design columns
    surface to callers; the failing pivot index is attached.
    """
    a = _as_matrix(a)
    n = a.shape[0]
    scale = np.abs(a.diagonal()).max() if n else 0.0
    if scale <= 0.0:
        raise NotPositiveDefinite("matrix has a non-positive diagonal", pivot=0)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-8 * scale):
        raise ValueError("matrix is not symmetric within tolerance")
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if d <= pivot_rtol * scale:
            raise NotPositiveDefinite(
                f"pivot {d:.3e} at index {j} below tolerance (collinear columns?)",
                pivot=j,
            )
        low[j, j] = np.sqrt(d)
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    One step of iterative refinement keeps the residual near roundoff;
    downstream moment-condition checks depend on that.
    """
    a = _as_matrix(a)
    b = np.asarray(b, dtype=float)
    low = cholesky_spd(a)

    def _solve(rhs):
        y = solve_triangular(low, rhs, lower=True, check_finite=False)
        return solve_triangular(low.T, y, lower=False, check_finite=False)

    x = _solve(b)
    x = x + _solve(b - a @ x)
    return x


def weighted_lsq(x, y, w) -> np.ndarray:
    """Coefficients minimizing ``sum_i w_i * (y_i - x_i @ b)**2``.

    Solved through the weighted normal equations; NotPositiveDefinite
    propagates from the Gram factorization when columns are collinear
    on the support of ``w``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.ndim != 2:
        raise ValueError("design matrix must be 2-D")
    if y.shape != (x.shape[0],) or w.shape != (x.shape[0],):
        raise ValueError("response/weight length must match design rows")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    wx = w[:, None] * x
    return solve_spd(x.T @ wx, wx.T @ y)


@dataclass(frozen=True)
class NewtonReport:
    solution: np.ndarray
    iterations: int
    final_gradient_norm: float
    converged: bool


Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


def newton_maximize(
    objective: Objective,
    init,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> NewtonReport:
    """Maximize a smooth concave objective by damped Newton steps.

    ``objective`` returns (value, gradient, hessian). Convergence is
    gradient sup-norm <= tol. Step halving (at most 30) enforces a
    monotone objective; when the negated Hessian is not positive
    definite a Levenberg-style ridge is added so that degenerate
    directions still make gradient progress (an unbounded objective
    then ends in MaxIterationsExceeded rather than a solver crash).
    """
    x = np.asarray(init, dtype=float).copy()
    val, grad, hess = objective(x)
    if not (np.isfinite(val) and np.all(np.isfinite(grad))):
        raise HessianSingular("objective non-finite at the initial point")
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm <= tol:
            return NewtonReport(x, it - 1, gnorm, True)
        if not np.all(np.isfinite(hess)):
            raise HessianSingular("objective returned a non-finite Hessian")
        neg_h = -hess
        try:
            step = solve_spd(neg_h, grad)
        except NotPositiveDefinite:
            ridge = 1e-8 * max(1.0, float(np.abs(neg_h.diagonal()).max()))
            step = None
            while step is None:
                try:
                    step = solve_spd(neg_h + ridge * np.eye(len(x)), grad)
                except NotPositiveDefinite:
                    ridge *= 1e4
                    if not np.isfinite(ridge):
                        raise HessianSingular("Hessian unusable even with ridge")
        scale = 1.0
        accepted = False
        # near the optimum the value change sinks below roundoff, so a
        # one-ulp decrease is tolerated when the gradient still shrinks
        slack = 1e-14 * (1.0 + abs(val))
        for _ in range(MAX_HALVINGS + 1):
            cand = x + scale * step
            cval, cgrad, chess = objective(cand)
            good = np.isfinite(cval) and np.all(np.isfinite(cgrad))
            improves = cval >= val or (
                cval >= val - slack and float(np.max(np.abs(cgrad))) <= gnorm
            )
            if good and improves:
                x, val, grad, hess = cand, cval, cgrad, chess
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            raise MaxIterationsExceeded(
                f"line search stalled at iteration {it} (gradient norm {gnorm:.3e})"
            )
    gnorm = float(np.max(np.abs(grad)))
    if gnorm <= tol:
        return NewtonReport(x, max_iter, gnorm, True)
    raise MaxIterationsExceeded(
        f"no convergence after {max_iter} iterations (gradient norm {gnorm:.3e})"
    )
