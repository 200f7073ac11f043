"""Influence-function construction, variance/CI computation, multiplier bootstrap.

The doubly robust estimators admit per-observation influence values whose
sample second moment estimates the asymptotic variance. For the generic
first-step fits (MLE propensity, OLS outcome regressions) the values include
first-step estimation-effect corrections built from the fits' linearization
vectors. For the tilted/odds-weighted fits those corrections vanish
identically at the fitted values, which is exactly why the improved
estimators can drop them.

Population expectations inside the influence function are replaced by
full-sample averages throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset, RcDataset
from .errors import MissingLinearization, RobustDidError
from .nuisance import OutcomeFit, PropensityFit

Z_95 = 1.959964
NORMAL_IQR = 1.3489795003921634  # q75 - q25 of the standard normal


def z_value(level: float) -> float:
    if abs(level - 0.95) < 1e-12:
        return Z_95
    from scipy.special import ndtri

    return float(ndtri(0.5 + level / 2.0))


@dataclass
class EifVector:
    values: np.ndarray
    components: dict[str, np.ndarray] = field(default_factory=dict)


def _odds(ps: PropensityFit, x: np.ndarray) -> np.ndarray:
    return ps.odds(x)


def _require_linearization(*fits):
    for f in fits:
        if f is not None and f.linearization is None:
            raise MissingLinearization(
                "estimation-effect terms need linearization vectors on every fit"
            )


def eif_dr_panel(
    data: PanelDataset,
    ps: PropensityFit,
    or_fit: OutcomeFit,
    att: float | None = None,
    include_est_effect: bool = True,
) -> EifVector:
    """Influence values of the doubly robust panel estimator.

    The estimation-effect component has two pieces: the outcome-coefficient
    direction weighted by the treated/control balance vector, and the
    propensity-coefficient direction weighted by the derivative of the
    odds-normalized control average.
    """
    x, d, dy = data.x, data.d, data.delta_y
    n = data.n
    resid = dy - or_fit.fitted
    w1 = d / d.mean()
    w0_raw = (1.0 - d) * _odds(ps, x)
    w0 = w0_raw / w0_raw.mean()
    m1 = float(np.mean(w1 * resid))
    m0 = float(np.mean(w0 * resid))
    eta_treat = w1 * (resid - m1)
    eta_cont = w0 * (resid - m0)
    est = np.zeros(n)
    if include_est_effect:
        _require_linearization(ps, or_fit)
        a_reg = ((w1 - w0)[:, None] * x).mean(axis=0)
        b_ps = ((w0_raw * (resid - m0))[:, None] * x).mean(axis=0) / w0_raw.mean()
        est = or_fit.linearization @ a_reg + ps.linearization @ b_ps
    values = eta_treat - eta_cont - est
    return EifVector(values, {"treated": eta_treat, "control": eta_cont, "est_effect": est})


def eif_dr_imp_panel(
    data: PanelDataset, ps: PropensityFit, or_fit: OutcomeFit, att: float
) -> EifVector:
    """Influence values of the improved panel estimator: no estimation effect."""
    x, d, dy = data.x, data.d, data.delta_y
    resid = dy - or_fit.fitted
    w1 = d / d.mean()
    w0_raw = (1.0 - d) * _odds(ps, x)
    w0 = w0_raw / w0_raw.mean()
    values = (w1 - w0) * resid - w1 * att
    return EifVector(values, {"centered": values})


def eif_dr_rc(
    j: int,
    data: RcDataset,
    ps_pre: PropensityFit,
    ps_post: PropensityFit,
    or_c_pre: OutcomeFit,
    or_c_post: OutcomeFit,
    or_t_pre: OutcomeFit | None = None,
    or_t_post: OutcomeFit | None = None,
    att: float | None = None,
    include_est_effect: bool = True,
) -> EifVector:
    """Influence values of the repeated-cross-section doubly robust estimators.

    ``j=1`` uses control-cell outcome models only; ``j=2`` adds the treated-cell
    regression terms, which carry no estimation effect of their own, so the
    correction terms are identical for both variants. ``ps_pre``/``ps_post``
    may be the same fit (pooled propensity) or period-specific fits.
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    x, d, t, y = data.x, data.d, data.t, data.y
    n = data.n

    eta1 = {}
    eta0 = {}
    m0 = {}
    cell_c = {}
    w0n = {}
    w1n = {}
    resid_c = {}
    for tv, ps in ((0, ps_pre), (1, ps_post)):
        or_fit = or_c_pre if tv == 0 else or_c_post
        in_period = (t == tv).astype(float)
        w1_raw = d * in_period
        w0_raw = (1.0 - d) * in_period * _odds(ps, x)
        w1 = w1_raw / w1_raw.mean()
        w0 = w0_raw / w0_raw.mean()
        resid = y - or_fit.fitted
        m1t = float(np.mean(w1 * resid))
        m0t = float(np.mean(w0 * resid))
        eta1[tv] = w1 * (resid - m1t)
        eta0[tv] = w0 * (resid - m0t)
        m0[tv] = m0t
        cell_c[tv] = w0_raw
        w0n[tv] = w0
        w1n[tv] = w1
        resid_c[tv] = resid

    eta_cont = eta0[1] - eta0[0]
    est = np.zeros(n)
    if include_est_effect:
        _require_linearization(ps_pre, ps_post, or_c_pre, or_c_post)
        a = {}
        b = {}
        for tv in (0, 1):
            a[tv] = ((w1n[tv] - w0n[tv])[:, None] * x).mean(axis=0)
            b[tv] = ((cell_c[tv] * (resid_c[tv] - m0[tv]))[:, None] * x).mean(
                axis=0
            ) / cell_c[tv].mean()
        est = (
            or_c_post.linearization @ a[1]
            - or_c_pre.linearization @ a[0]
            + ps_post.linearization @ b[1]
            - ps_pre.linearization @ b[0]
        )

    if j == 1:
        eta_treat = eta1[1] - eta1[0]
        values = eta_treat - eta_cont - est
        return EifVector(
            values, {"treated": eta_treat, "control": eta_cont, "est_effect": est}
        )

    if or_t_pre is None or or_t_post is None:
        raise ValueError("j=2 requires the treated-cell outcome fits")
    w1 = d / d.mean()
    mu_treat_delta = or_t_post.fitted - or_t_pre.fitted
    mu_cont_delta = or_c_post.fitted - or_c_pre.fitted
    c_treat = float(np.mean(w1 * mu_treat_delta))
    c_cont = float(np.mean(w1 * mu_cont_delta))
    parts = {}
    for tv, or_t in ((0, or_t_pre), (1, or_t_post)):
        resid = y - or_t.fitted
        m1t = float(np.mean(w1n[tv] * resid))
        parts[tv] = w1n[tv] * (resid - m1t)
    eta_treat = (
        w1 * ((mu_treat_delta - mu_cont_delta) - (c_treat - c_cont))
        + parts[1]
        - parts[0]
    )
    values = eta_treat - eta_cont - est
    return EifVector(values, {"treated": eta_treat, "control": eta_cont, "est_effect": est})


def se_ci_from_eif(
    eif: EifVector, n: int, att: float, level: float = 0.95
) -> tuple[float, tuple[float, float]]:
    """Plug-in standard error sqrt(mean(values^2)/n) and normal interval."""
    se = float(np.sqrt(np.mean(eif.values**2) / n))
    z = z_value(level)
    return se, (att - z * se, att + z * se)


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    draws: int
    failures: int


def multiplier_bootstrap(estimator, n: int, draws: int, rng) -> BootstrapResult:
    """Weighted bootstrap SE with standard-exponential multipliers.

    ``estimator`` maps a weight vector to a point estimate. The spread is
    measured by the interquartile range rescaled to normal units, which
    stays finite under the heavy-tailed draws the unnormalized IPW
    estimators produce. Failed or non-finite draws are counted, not fatal.
    """
    vals = []
    failures = 0
    for _ in range(draws):
        w = rng.standard_exponential(n)
        try:
            v = float(estimator(w))
        except RobustDidError:
            failures += 1
            continue
        if not np.isfinite(v):
            failures += 1
            continue
        vals.append(v)
    if not vals:
        return BootstrapResult(float("nan"), draws, failures)
    q25, q75 = np.percentile(vals, [25.0, 75.0])
    return BootstrapResult(float((q75 - q25) / NORMAL_IQR), draws, failures)
