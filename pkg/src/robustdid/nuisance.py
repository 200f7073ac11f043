"""First-step working-model fits: logistic propensity scores and outcome regressions.

Two propensity estimators are provided. Maximum likelihood is the standard
choice; the tilting estimator maximizes ``E_n[D X'g - (1-D) exp(X'g)]`` whose
first-order condition forces exact covariate balance between the treated and
the odds-reweighted controls. Outcome regressions come in plain OLS and in a
propensity-odds weighted variant whose first-order condition removes the
first-step estimation effect from the doubly robust estimators downstream.

Every fit carries per-observation linearization vectors, scaled so that the
fitted coefficients satisfy ``coef_hat ~= coef* + mean_i l_i``. Linearizations
of subsample fits are defined over the full sample with indicator scaling so
that influence-function sums always run over all n observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import (
    AllTreatedOrAllControl,
    ExtremePropensity,
    HessianSingular,
    InsufficientSubsample,
    MaxIterationsExceeded,
    NotPositiveDefinite,
    ObjectiveUnbounded,
    Separation,
)
from .numkit import newton_maximize, solve_spd

EXP_CLAMP = 700.0
PIN_Z = 30.0  # |index| beyond this puts a fitted probability within 1e-13 of {0,1}
OVERLAP_TOL = 1e-6


@dataclass(frozen=True)
class PropensityFit:
    method: str  # "mle", "ipt", or "oracle"
    gamma: np.ndarray | None
    fitted: np.ndarray
    linearization: np.ndarray | None
    converged: bool

    def odds(self, x: np.ndarray) -> np.ndarray:
        """pi/(1-pi), as exp(X'gamma) so the weighted FOC identities are exact.

        Oracle fits carry no coefficients and fall back to the fitted values.
        """
        if self.gamma is None:
            return self.fitted / (1.0 - self.fitted)
        return np.exp(x @ self.gamma)


@dataclass(frozen=True)
class OutcomeFit:
    method: str  # "ols" or "wls"
    beta: np.ndarray
    subgroup: str
    fitted: np.ndarray
    linearization: np.ndarray
    mask: np.ndarray


def _validate_design(x, d=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("design matrix must be 2-D")
    if d is None:
        return x, None
    d = np.asarray(d, dtype=float)
    if d.shape != (x.shape[0],):
        raise ValueError("treatment vector length must match design rows")
    if not np.isin(d, (0.0, 1.0)).all():
        raise ValueError("treatment vector must be 0/1")
    if d.sum() == 0 or d.sum() == len(d):
        raise AllTreatedOrAllControl("all units treated or all units control")
    return x, d


def _unit_weights(n, weights):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a nonnegative finite vector of length n")
    return w


def _check_pinned(z, d, fitted):
    if np.max(np.abs(z)) >= PIN_Z:
        raise Separation("fitted propensities pinned to {0, 1}")
    if np.max(np.abs(d - fitted)) <= 1e-4:
        # the score can meet the tolerance while the likelihood is unbounded
        raise Separation("sample perfectly classified by the fitted index")


def fit_logit_mle(
    x, d, *, weights=None, tol=1e-9, max_iter=100, init=None
) -> PropensityFit:
    """Logistic propensity score by maximum likelihood (Newton-Raphson).

    Starts from zero unless ``init`` supplies a warm start (used by the
    bootstrap, whose reweighted fits sit near the full-sample solution).
    """
    x, d = _validate_design(x, d)
    n = x.shape[0]
    w = _unit_weights(n, weights)

    def objective(gamma):
        z = x @ gamma
        val = float(np.mean(w * (d * log_expit(z) + (1.0 - d) * log_expit(-z))))
        p = expit(z)
        grad = x.T @ (w * (d - p)) / n
        hess = -(x * (w * p * (1.0 - p))[:, None]).T @ x / n
        return val, grad, hess

    start = np.zeros(x.shape[1]) if init is None else np.asarray(init, dtype=float)
    try:
        report = newton_maximize(objective, start, tol=tol, max_iter=max_iter)
    except (MaxIterationsExceeded, HessianSingular, NotPositiveDefinite) as exc:
        raise Separation(f"logit MLE did not converge: {exc}") from exc
    gamma = report.solution
    z = x @ gamma
    fitted = expit(z)
    _check_pinned(z, d, fitted)
    info = (x * (w * fitted * (1.0 - fitted))[:, None]).T @ x / n
    score = (w * (d - fitted))[:, None] * x
    linearization = solve_spd(info, score.T).T
    return PropensityFit("mle", gamma, fitted, linearization, report.converged)


def fit_logit_ipt(
    x, d, *, weights=None, tol=1e-9, max_iter=100, init=None
) -> PropensityFit:
    """Logistic propensity score by inverse probability tilting.

    The concave objective is ``E_n[w (D X'g - (1-D) exp(X'g))]``; its FOC
    ``E_n[w (D - (1-D) exp(X'g)) X] = 0`` delivers exact balance of the
    design columns under the implied control weights. Warm-started at the
    MLE solution, falling back to zero when the MLE itself fails.
    """
    x, d = _validate_design(x, d)
    n = x.shape[0]
    w = _unit_weights(n, weights)

    def objective(gamma):
        z = np.clip(x @ gamma, -EXP_CLAMP, EXP_CLAMP)
        ez = np.exp(z)
        val = float(np.mean(w * (d * z - (1.0 - d) * ez)))
        cw = w * (1.0 - d) * ez
        grad = x.T @ (w * d - cw) / n
        hess = -(x * cw[:, None]).T @ x / n
        return val, grad, hess

    if init is None:
        try:
            init = fit_logit_mle(x, d, weights=weights, tol=tol, max_iter=max_iter).gamma
        except Separation:
            init = np.zeros(x.shape[1])
    try:
        report = newton_maximize(objective, np.asarray(init, dtype=float), tol=tol, max_iter=max_iter)
    except (MaxIterationsExceeded, HessianSingular, NotPositiveDefinite) as exc:
        raise Separation(f"tilting fit did not converge: {exc}") from exc
    gamma = report.solution
    z = x @ gamma
    if np.max(np.abs(z)) >= EXP_CLAMP:
        raise ObjectiveUnbounded("tilting index hit the overflow clamp")
    fitted = expit(z)
    _check_pinned(z, d, fitted)
    ez = np.exp(z)
    cw = w * (1.0 - d) * ez
    info = (x * cw[:, None]).T @ x / n
    score = (w * d - cw)[:, None] * x
    linearization = solve_spd(info, score.T).T
    return PropensityFit("ipt", gamma, fitted, linearization, report.converged)


def _fit_or(x, y, mask, omega, method, subgroup, weights):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n, k = x.shape
    if y.shape != (n,) or mask.shape != (n,):
        raise ValueError("response/mask length must match design rows")
    if mask.sum() < k:
        raise InsufficientSubsample(
            f"subsample '{subgroup}' has {int(mask.sum())} rows for {k} coefficients"
        )
    w = _unit_weights(n, weights) * mask * omega
    gram = (x * w[:, None]).T @ x / n
    try:
        beta = solve_spd(gram, x.T @ (w * y) / n)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(
            f"collinear design on subsample '{subgroup}': {exc}", pivot=exc.pivot
        ) from exc
    fitted = x @ beta
    score = (w * (y - fitted))[:, None] * x
    linearization = solve_spd(gram, score.T).T
    return OutcomeFit(method, beta, subgroup, fitted, linearization, mask)


def fit_or_ols(x, y, mask, *, weights=None, subgroup="") -> OutcomeFit:
    """OLS on the masked subsample; fitted values over the full sample."""
    return _fit_or(x, y, mask, 1.0, "ols", subgroup, weights)


def fit_or_wls(x, y, mask, ps: PropensityFit, *, weights=None, subgroup="") -> OutcomeFit:
    """Least squares on the masked subsample weighted by the propensity odds.

    Weights are exp(X'gamma) = pi/(1-pi); raises ExtremePropensity when a
    masked unit's 1-pi is numerically zero, since the weight then explodes.
    """
    mask_arr = np.asarray(mask, dtype=bool)
    if np.any(1.0 - ps.fitted[mask_arr] < OVERLAP_TOL):
        raise ExtremePropensity("masked unit with fitted propensity at 1")
    omega = ps.odds(np.asarray(x, dtype=float))
    return _fit_or(x, y, mask_arr, omega, "wls", subgroup, weights)


def check_overlap(ps_fitted, d, threshold: float = OVERLAP_TOL) -> None:
    """Hard error when any control unit's fitted propensity is at 1."""
    controls = np.asarray(d) == 0
    if np.any(1.0 - np.asarray(ps_fitted)[controls] < threshold):
        raise ExtremePropensity("control unit with fitted propensity at 1")
