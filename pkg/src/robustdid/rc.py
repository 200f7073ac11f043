"""ATT estimators for repeated cross-section data.

Eight estimators: TWFE, outcome regression, unnormalized and Hajek IPW, two
doubly robust variants (with and without treated-cell outcome models), and
their improved versions built on tilted propensity fits and odds-weighted
outcome regressions.

The improved estimators fit the tilting propensity separately within each
period. Under the sampling design the period split is independent of
(treatment, covariates), so both tilts estimate the same coefficient vector;
fitting per period makes the treated/control balance hold exactly within
each period, which is what removes every first-step term from the influence
function in the sample and not just in the limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import AttEstimate, RcDataset
from .errors import MomentConditionError, RobustDidError
from .inference import eif_dr_rc, multiplier_bootstrap, se_ci_from_eif, z_value
from .nuisance import (
    OutcomeFit,
    PropensityFit,
    check_overlap,
    fit_logit_ipt,
    fit_logit_mle,
    fit_or_ols,
    fit_or_wls,
)
from .numkit import solve_spd, weighted_lsq
from .panel import (
    EstimatorConfig,
    MOMENT_TOL,
    _base_diagnostics,
    _bootstrap_estimate,
    _fit_ps,
    _if_estimate,
    _ps_diagnostics,
)

RC_TAGS = ("twfe", "reg", "ipw", "ipw_std", "dr1", "dr2", "dr1_imp", "dr2_imp")


@dataclass(frozen=True)
class RcWeights:
    """Cell weights: treated-by-period shares and odds-tilted control weights.

    Each vector sums to one and is supported on its own (d, t) cell.
    """

    w11: np.ndarray
    w10: np.ndarray
    w01: np.ndarray
    w00: np.ndarray

    @property
    def treated_contrast(self) -> np.ndarray:
        return self.w11 - self.w10

    @property
    def control_contrast(self) -> np.ndarray:
        return self.w01 - self.w00


def rc_weights(d, t, odds_pre, odds_post) -> RcWeights:
    """Build the four normalized cell-weight vectors from control odds."""
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    w11 = d * t
    w10 = d * (1.0 - t)
    w01 = (1.0 - d) * t * odds_post
    w00 = (1.0 - d) * (1.0 - t) * odds_pre
    return RcWeights(
        w11 / w11.sum(), w10 / w10.sum(), w01 / w01.sum(), w00 / w00.sum()
    )


def _cell_mask(data: RcDataset, dv: int, tv: int) -> np.ndarray:
    return (data.d == dv) & (data.t == tv)


# ---------------------------------------------------------------- TWFE


def att_twfe_rc(data: RcDataset, level: float = 0.95) -> AttEstimate:
    """Pooled TWFE regression; heteroskedasticity-robust SE."""
    n = data.n
    design = np.column_stack(
        [np.ones(n), data.t, data.d, data.t * data.d, data.x[:, 1:]]
    )
    beta = weighted_lsq(design, data.y, np.ones(n))
    resid = data.y - design @ beta
    gram = design.T @ design
    scores = design * resid[:, None]
    values = solve_spd(gram, scores.T).T[:, 3] * n
    att = float(beta[3])
    se = float(np.sqrt(np.mean(values**2) / n))
    z = z_value(level)
    diag = _base_diagnostics(data)
    diag["se_method"] = "hc-robust"
    return AttEstimate(
        "twfe", att, se, (att - z * se, att + z * se), level, values, diag
    )


# ----------------------------------------------------- outcome regression


def _or_point_rc(data: RcDataset, w) -> float:
    fits = {
        tv: fit_or_ols(
            data.x, data.y, _cell_mask(data, 0, tv), weights=w, subgroup=f"d=0,t={tv}"
        )
        for tv in (0, 1)
    }
    w11 = w * data.d * data.t
    w10 = w * data.d * (1.0 - data.t)
    wtr = w * data.d
    ybar11 = np.sum(w11 * data.y) / np.sum(w11)
    ybar10 = np.sum(w10 * data.y) / np.sum(w10)
    trend = np.sum(wtr * (fits[1].fitted - fits[0].fitted)) / np.sum(wtr)
    return float(ybar11 - (ybar10 + trend))


def att_or_rc(data, *, bootstrap_draws=999, rng=None, level=0.95) -> AttEstimate:
    """Outcome-regression estimator with period-specific control fits."""
    att = _or_point_rc(data, np.ones(data.n))
    rng = np.random.default_rng(0) if rng is None else rng
    boot = multiplier_bootstrap(
        lambda w: _or_point_rc(data, w), data.n, bootstrap_draws, rng
    )
    return _bootstrap_estimate("reg", data, att, boot, level)


# ------------------------------------------------------------------- IPW


def _ipw_point_rc(data, w, method, hajek, init=None) -> float:
    ps = _fit_ps(data.x, data.d, method, weights=w, init=init)
    check_overlap(ps.fitted, data.d)
    odds = np.exp(data.x @ ps.gamma)
    return _ipw_value_rc(data, w, odds, hajek)


def _ipw_value_rc(data, w, odds, hajek) -> float:
    d, t, y = data.d, data.t, data.y
    if hajek:
        w11 = w * d * t
        w10 = w * d * (1.0 - t)
        w01 = w * (1.0 - d) * t * odds
        w00 = w * (1.0 - d) * (1.0 - t) * odds
        treat = np.sum(w11 * y) / np.sum(w11) - np.sum(w10 * y) / np.sum(w10)
        cont = np.sum(w01 * y) / np.sum(w01) - np.sum(w00 * y) / np.sum(w00)
        return float(treat - cont)
    lam = np.sum(w * t) / np.sum(w)
    signed = d - (1.0 - d) * odds
    period = (t - lam) / (lam * (1.0 - lam))
    return float(np.sum(w * signed * period * y) / np.sum(w * d))


def att_ipw_rc(data, ps, *, bootstrap_draws=999, rng=None, level=0.95) -> AttEstimate:
    """Unnormalized IPW plug-in with the sample period share as lambda."""
    return _att_ipw_rc(data, ps, False, bootstrap_draws, rng, level)


def att_ipw_std_rc(data, ps, *, bootstrap_draws=999, rng=None, level=0.95) -> AttEstimate:
    """Hajek IPW: the same cell weights the doubly robust estimators use."""
    return _att_ipw_rc(data, ps, True, bootstrap_draws, rng, level)


def _att_ipw_rc(data, ps, hajek, bootstrap_draws, rng, level) -> AttEstimate:
    check_overlap(ps.fitted, data.d)
    odds = np.exp(data.x @ ps.gamma)
    att = _ipw_value_rc(data, np.ones(data.n), odds, hajek)
    rng = np.random.default_rng(0) if rng is None else rng
    boot = multiplier_bootstrap(
        lambda w: _ipw_point_rc(data, w, ps.method, hajek, init=ps.gamma),
        data.n,
        bootstrap_draws,
        rng,
    )
    method = "ipw_std" if hajek else "ipw"
    return _bootstrap_estimate(
        method, data, att, boot, level, _ps_diagnostics(ps, data.d)
    )


# ---------------------------------------------------------- doubly robust


def _control_fits_ols(data: RcDataset) -> dict[int, OutcomeFit]:
    return {
        tv: fit_or_ols(data.x, data.y, _cell_mask(data, 0, tv), subgroup=f"d=0,t={tv}")
        for tv in (0, 1)
    }


def _treated_fits_ols(data: RcDataset) -> dict[int, OutcomeFit]:
    return {
        tv: fit_or_ols(data.x, data.y, _cell_mask(data, 1, tv), subgroup=f"d=1,t={tv}")
        for tv in (0, 1)
    }


def _dr1_point(data, weights: RcWeights, or_pre, or_post) -> float:
    treat = np.sum(weights.w11 * (data.y - or_post.fitted)) - np.sum(
        weights.w10 * (data.y - or_pre.fitted)
    )
    cont = np.sum(weights.w01 * (data.y - or_post.fitted)) - np.sum(
        weights.w00 * (data.y - or_pre.fitted)
    )
    return float(treat - cont)


def _dr2_corrections(data, weights: RcWeights, or_c, or_t) -> float:
    share = data.d / data.d.sum()
    post = np.sum((share - weights.w11) * (or_t[1].fitted - or_c[1].fitted))
    pre = np.sum((share - weights.w10) * (or_t[0].fitted - or_c[0].fitted))
    return float(post - pre)


def att_dr1_rc(
    data: RcDataset,
    ps: PropensityFit,
    or_pre: OutcomeFit,
    or_post: OutcomeFit,
    level: float = 0.95,
) -> AttEstimate:
    """Doubly robust estimator using control-cell outcome models only."""
    check_overlap(ps.fitted, data.d)
    odds = np.exp(data.x @ ps.gamma)
    weights = rc_weights(data.d, data.t, odds, odds)
    att = _dr1_point(data, weights, or_pre, or_post)
    eif = eif_dr_rc(1, data, ps, ps, or_pre, or_post, att=att, include_est_effect=True)
    return _if_estimate("dr1", data, att, eif, level, _ps_diagnostics(ps, data.d))


def att_dr2_rc(
    data: RcDataset,
    ps: PropensityFit,
    or_c: dict[int, OutcomeFit],
    or_t: dict[int, OutcomeFit],
    level: float = 0.95,
) -> AttEstimate:
    """Locally efficient doubly robust estimator with treated-cell models."""
    check_overlap(ps.fitted, data.d)
    odds = np.exp(data.x @ ps.gamma)
    weights = rc_weights(data.d, data.t, odds, odds)
    att = _dr1_point(data, weights, or_c[0], or_c[1]) + _dr2_corrections(
        data, weights, or_c, or_t
    )
    eif = eif_dr_rc(
        2,
        data,
        ps,
        ps,
        or_c[0],
        or_c[1],
        or_t[0],
        or_t[1],
        att=att,
        include_est_effect=True,
    )
    return _if_estimate("dr2", data, att, eif, level, _ps_diagnostics(ps, data.d))


# ------------------------------------------------------ improved variants


def fit_logit_ipt_period(data: RcDataset, tv: int) -> PropensityFit:
    """Tilting fit on one period's subsample, reported over the full sample.

    The coefficient solves the balance FOC within period ``tv``; fitted
    values are evaluated for every observation and the linearization uses
    full-sample averaging with the period indicator, so influence sums
    still run over all n.
    """
    in_period = data.t == tv
    sub = fit_logit_ipt(data.x[in_period], data.d[in_period])
    x, d = data.x, data.d
    n = data.n
    z = x @ sub.gamma
    fitted = expit(z)
    ez = np.exp(z)
    cw = (1.0 - d) * in_period * ez
    info = (x * cw[:, None]).T @ x / n
    score = (d * in_period - cw)[:, None] * x
    linearization = solve_spd(info, score.T).T
    return PropensityFit("ipt", sub.gamma, fitted, linearization, sub.converged)


def _improved_first_steps(data: RcDataset):
    ps = {tv: fit_logit_ipt_period(data, tv) for tv in (0, 1)}
    for tv in (0, 1):
        in_period = data.t == tv
        check_overlap(ps[tv].fitted[in_period], data.d[in_period])
    or_c = {
        tv: fit_or_wls(
            data.x, data.y, _cell_mask(data, 0, tv), ps[tv], subgroup=f"d=0,t={tv}"
        )
        for tv in (0, 1)
    }
    _check_rc_moments(data, ps, or_c)
    return ps, or_c


def _check_rc_moments(data, ps, or_c):
    """Per-period balance and weighted-FOC vectors must vanish at the fits."""
    worst = 0.0
    for tv in (0, 1):
        in_period = (data.t == tv).astype(float)
        odds = np.exp(data.x @ ps[tv].gamma)
        w1 = data.d * in_period
        w1 = w1 / w1.mean()
        w0 = (1.0 - data.d) * in_period * odds
        w0 = w0 / w0.mean()
        resid = data.y - or_c[tv].fitted
        balance = ((w1 - w0)[:, None] * data.x).mean(axis=0)
        foc = (((1.0 - data.d) * in_period * odds * resid)[:, None] * data.x).mean(axis=0)
        mean_resid = np.mean(w0 * resid)
        worst = max(
            worst,
            float(np.max(np.abs(balance))),
            float(np.max(np.abs(foc))),
            abs(float(mean_resid)),
        )
    if worst > MOMENT_TOL:
        raise MomentConditionError(
            f"period moment conditions not satisfied at the fits (sup-norm {worst:.2e})"
        )
    return worst


def _improved_weights(data, ps) -> RcWeights:
    odds_pre = np.exp(data.x @ ps[0].gamma)
    odds_post = np.exp(data.x @ ps[1].gamma)
    return rc_weights(data.d, data.t, odds_pre, odds_post)


def att_dr1_imp_rc(data: RcDataset, level: float = 0.95, _first_steps=None) -> AttEstimate:
    """Improved doubly robust estimator without treated-cell models."""
    ps, or_c = _first_steps if _first_steps is not None else _improved_first_steps(data)
    weights = _improved_weights(data, ps)
    att = _dr1_point(data, weights, or_c[0], or_c[1])
    eif = eif_dr_rc(
        1, data, ps[0], ps[1], or_c[0], or_c[1], att=att, include_est_effect=False
    )
    extra = _ps_diagnostics(ps[1], data.d)
    return _if_estimate("dr1_imp", data, att, eif, level, extra)


def att_dr2_imp_rc(
    data: RcDataset, level: float = 0.95, _first_steps=None, _or_t=None
) -> AttEstimate:
    """Improved locally efficient doubly robust estimator.

    Treated-cell coefficients are plain OLS: they enter the estimand in a
    form whose estimation carries no first-step effect, so the estimation
    method there is free.
    """
    ps, or_c = _first_steps if _first_steps is not None else _improved_first_steps(data)
    or_t = _or_t if _or_t is not None else _treated_fits_ols(data)
    weights = _improved_weights(data, ps)
    att = _dr1_point(data, weights, or_c[0], or_c[1]) + _dr2_corrections(
        data, weights, or_c, or_t
    )
    eif = eif_dr_rc(
        2,
        data,
        ps[0],
        ps[1],
        or_c[0],
        or_c[1],
        or_t[0],
        or_t[1],
        att=att,
        include_est_effect=False,
    )
    extra = _ps_diagnostics(ps[1], data.d)
    return _if_estimate("dr2_imp", data, att, eif, level, extra)


# ------------------------------------------------------------- dispatcher


def estimate_rc(
    data: RcDataset, tags, cfg: EstimatorConfig, rng=None
) -> dict[str, AttEstimate | RobustDidError]:
    """Run the requested estimators, sharing first-step fits."""
    tags = list(tags)
    unknown = [t for t in tags if t not in RC_TAGS]
    if unknown:
        raise ValueError(f"unknown rc estimator tags: {unknown}")
    rng = np.random.default_rng(0) if rng is None else rng
    child_rngs = dict(zip(RC_TAGS, rng.spawn(len(RC_TAGS))))

    trimmed = 0
    if cfg.trim_threshold is not None:
        ps = _fit_ps(data.x, data.d, cfg.ps_method)
        keep = ps.fitted < cfg.trim_threshold
        trimmed = int(data.n - keep.sum())
        if trimmed:
            data = RcDataset(data.y[keep], data.t[keep], data.d[keep], data.x[keep])

    cache: dict[str, object] = {}

    def shared(key, builder):
        if key not in cache:
            try:
                cache[key] = builder()
            except RobustDidError as exc:
                cache[key] = exc
        got = cache[key]
        if isinstance(got, RobustDidError):
            raise got
        return got

    def run(tag):
        if tag == "twfe":
            return att_twfe_rc(data, cfg.level)
        if tag == "reg":
            return att_or_rc(
                data,
                bootstrap_draws=cfg.bootstrap_draws,
                rng=child_rngs[tag],
                level=cfg.level,
            )
        if tag in ("ipw", "ipw_std"):
            ps = shared("ps", lambda: _fit_ps(data.x, data.d, cfg.ps_method))
            fn = att_ipw_std_rc if tag == "ipw_std" else att_ipw_rc
            return fn(
                data,
                ps,
                bootstrap_draws=cfg.bootstrap_draws,
                rng=child_rngs[tag],
                level=cfg.level,
            )
        if tag == "dr1":
            ps = shared("ps", lambda: _fit_ps(data.x, data.d, cfg.ps_method))
            or_c = shared("or_c", lambda: _control_fits_ols(data))
            return att_dr1_rc(data, ps, or_c[0], or_c[1], cfg.level)
        if tag == "dr2":
            ps = shared("ps", lambda: _fit_ps(data.x, data.d, cfg.ps_method))
            or_c = shared("or_c", lambda: _control_fits_ols(data))
            or_t = shared("or_t", lambda: _treated_fits_ols(data))
            return att_dr2_rc(data, ps, or_c, or_t, cfg.level)
        if tag == "dr1_imp":
            steps = shared("imp", lambda: _improved_first_steps(data))
            return att_dr1_imp_rc(data, cfg.level, _first_steps=steps)
        if tag == "dr2_imp":
            steps = shared("imp", lambda: _improved_first_steps(data))
            or_t = shared("or_t", lambda: _treated_fits_ols(data))
            return att_dr2_imp_rc(data, cfg.level, _first_steps=steps, _or_t=or_t)
        raise ValueError(tag)

    results: dict[str, AttEstimate | RobustDidError] = {}
    for tag in tags:
        try:
            est = run(tag)
            if trimmed:
                est.diagnostics["n_trimmed"] = trimmed
            results[tag] = est
        except RobustDidError as exc:
            results[tag] = exc
    return results
