"""ATT estimators for panel data: TWFE, outcome regression, IPW, doubly robust.

All estimators are pure functions of the dataset and first-step fits. The
``estimate_panel`` dispatcher shares first-step fits across requested
estimators and isolates per-estimator failures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AttEstimate, PanelDataset
from .errors import MomentConditionError, RobustDidError
from .inference import (
    BootstrapResult,
    eif_dr_imp_panel,
    eif_dr_panel,
    multiplier_bootstrap,
    se_ci_from_eif,
    z_value,
)
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

PANEL_TAGS = ("twfe", "reg", "ipw", "ipw_std", "dr", "dr_imp")
MOMENT_TOL = 1e-7


@dataclass
class EstimatorConfig:
    ps_method: str = "mle"
    bootstrap_draws: int = 999
    level: float = 0.95
    trim_threshold: float | None = None


def _fit_ps(x, d, method, weights=None, init=None) -> PropensityFit:
    if method == "mle":
        return fit_logit_mle(x, d, weights=weights, init=init)
    if method == "ipt":
        return fit_logit_ipt(x, d, weights=weights, init=init)
    raise ValueError(f"unknown propensity method {method!r}")


def _ps_diagnostics(ps: PropensityFit, d) -> dict:
    ctrl = ps.fitted[np.asarray(d) == 0]
    return {
        "ps_method": ps.method,
        "ps_converged": ps.converged,
        "ps_min_control": float(ctrl.min()),
        "ps_max_control": float(ctrl.max()),
    }


def _base_diagnostics(data) -> dict:
    return {"n": data.n, "n_treated": int(data.d.sum())}


def _bootstrap_estimate(
    method, data, att, boot: BootstrapResult, level, extra=None
) -> AttEstimate:
    z = z_value(level)
    diag = _base_diagnostics(data)
    diag.update(
        {"bootstrap_draws": boot.draws, "bootstrap_failures": boot.failures}
    )
    if extra:
        diag.update(extra)
    se = boot.se
    return AttEstimate(method, att, se, (att - z * se, att + z * se), level, None, diag)


def _if_estimate(method, data, att, eif, level, extra=None) -> AttEstimate:
    se, ci = se_ci_from_eif(eif, data.n, att, level)
    diag = _base_diagnostics(data)
    if extra:
        diag.update(extra)
    return AttEstimate(method, att, se, ci, level, eif.values, diag)


# ---------------------------------------------------------------- TWFE


def _twfe_stack(data: PanelDataset):
    n = data.n
    ones = np.ones(n)
    zeros = np.zeros(n)
    xnc = data.x[:, 1:]
    row0 = np.column_stack([ones, zeros, data.d, zeros, xnc])
    row1 = np.column_stack([ones, ones, data.d, data.d, xnc])
    design = np.vstack([row0, row1])
    response = np.concatenate([data.y0, data.y1])
    return design, response


def att_twfe_panel(data: PanelDataset, level: float = 0.95) -> AttEstimate:
    """Two-way fixed effects regression; SE cluster-robust by unit.

    Stacks both periods of every unit and regresses the outcome on
    (1, period, group, period*group, covariates); the interaction
    coefficient is the estimate.
    """
    design, response = _twfe_stack(data)
    n = data.n
    beta = weighted_lsq(design, response, np.ones(2 * n))
    resid = response - design @ beta
    gram = design.T @ design
    scores = design[:n] * resid[:n, None] + design[n:] * resid[n:, None]
    values = solve_spd(gram, scores.T).T[:, 3] * n  # per-unit influence values
    att = float(beta[3])
    se = float(np.sqrt(np.mean(values**2) / n))
    z = z_value(level)
    diag = _base_diagnostics(data)
    diag["se_method"] = "cluster-by-unit"
    return AttEstimate(
        "twfe", att, se, (att - z * se, att + z * se), level, values, diag
    )


# ----------------------------------------------------- outcome regression


def _or_point_panel(data: PanelDataset, w) -> float:
    fit = fit_or_ols(data.x, data.delta_y, data.d == 0, weights=w, subgroup="d=0,delta")
    wt = w * data.d
    return float(np.sum(wt * (data.delta_y - fit.fitted)) / np.sum(wt))


def att_or_panel(
    data: PanelDataset,
    *,
    bootstrap_draws: int = 999,
    rng=None,
    level: float = 0.95,
) -> AttEstimate:
    """Outcome-regression estimator: treated mean outcome change minus the
    control-fitted change averaged over treated units. Bootstrap SE."""
    att = _or_point_panel(data, np.ones(data.n))
    rng = np.random.default_rng(0) if rng is None else rng
    boot = multiplier_bootstrap(
        lambda w: _or_point_panel(data, w), data.n, bootstrap_draws, rng
    )
    return _bootstrap_estimate("reg", data, att, boot, level)


# ------------------------------------------------------------------- IPW


def _ipw_point_panel(data, w, method, hajek, init=None) -> float:
    ps = _fit_ps(data.x, data.d, method, weights=w, init=init)
    check_overlap(ps.fitted, data.d)
    odds = np.exp(data.x @ ps.gamma)
    d, dy = data.d, data.delta_y
    if hajek:
        w1 = w * d
        w0 = w * (1.0 - d) * odds
        return float(np.sum(w1 * dy) / np.sum(w1) - np.sum(w0 * dy) / np.sum(w0))
    signed = d - (1.0 - d) * odds  # (D - pi)/(1 - pi)
    return float(np.sum(w * signed * dy) / np.sum(w * d))


def _att_ipw_panel(data, ps, hajek, bootstrap_draws, rng, level) -> AttEstimate:
    check_overlap(ps.fitted, data.d)
    att = _ipw_point_panel_from_fit(data, ps, hajek)
    rng = np.random.default_rng(0) if rng is None else rng
    boot = multiplier_bootstrap(
        lambda w: _ipw_point_panel(data, w, ps.method, hajek, init=ps.gamma),
        data.n,
        bootstrap_draws,
        rng,
    )
    method = "ipw_std" if hajek else "ipw"
    return _bootstrap_estimate(
        method, data, att, boot, level, _ps_diagnostics(ps, data.d)
    )


def _ipw_point_panel_from_fit(data, ps, hajek) -> float:
    odds = np.exp(data.x @ ps.gamma)
    d, dy = data.d, data.delta_y
    if hajek:
        w1 = d / d.sum()
        w0 = (1.0 - d) * odds
        w0 = w0 / w0.sum()
        return float(np.sum((w1 - w0) * dy))
    signed = d - (1.0 - d) * odds
    return float(np.mean(signed * dy) / np.mean(d))


def att_ipw_panel(data, ps, *, bootstrap_draws=999, rng=None, level=0.95) -> AttEstimate:
    """Unnormalized (Horvitz-Thompson) IPW estimator of the ATT."""
    return _att_ipw_panel(data, ps, False, bootstrap_draws, rng, level)


def att_ipw_std_panel(data, ps, *, bootstrap_draws=999, rng=None, level=0.95) -> AttEstimate:
    """Hajek IPW estimator: both weight sets normalized to sum to one."""
    return _att_ipw_panel(data, ps, True, bootstrap_draws, rng, level)


# ---------------------------------------------------------- doubly robust


def _dr_point(data, ps, or_fit) -> float:
    d = data.d
    odds = np.exp(data.x @ ps.gamma)
    resid = data.delta_y - or_fit.fitted
    w1 = d / d.sum()
    w0 = (1.0 - d) * odds
    w0 = w0 / w0.sum()
    return float(np.sum((w1 - w0) * resid))


def att_dr_panel(
    data: PanelDataset, ps: PropensityFit, or_fit: OutcomeFit, level: float = 0.95
) -> AttEstimate:
    """Doubly robust estimator with generic first steps; the SE includes the
    first-step estimation-effect corrections."""
    check_overlap(ps.fitted, data.d)
    att = _dr_point(data, ps, or_fit)
    eif = eif_dr_panel(data, ps, or_fit, att, include_est_effect=True)
    return _if_estimate("dr", data, att, eif, level, _ps_diagnostics(ps, data.d))


def improved_moment_vectors(data, ps, or_fit):
    """Sample moment vectors that the tilted/odds-weighted fits must zero out."""
    x, d = data.x, data.d
    odds = np.exp(x @ ps.gamma)
    resid = data.delta_y - or_fit.fitted
    w1 = d / d.mean()
    w0 = (1.0 - d) * odds
    w0 = w0 / w0.mean()
    balance = ((w1 - w0)[:, None] * x).mean(axis=0)
    wls_foc = (((1.0 - d) * odds * resid)[:, None] * x).mean(axis=0)
    control_resid = np.array([np.mean(w0 * resid)])
    return balance, wls_foc, control_resid


def att_dr_imp_panel(data: PanelDataset, level: float = 0.95) -> AttEstimate:
    """Improved doubly robust estimator: tilted propensity + odds-weighted
    outcome regression; no estimation effect enters the SE.

    An internal check asserts the three sample moment vectors implied by the
    first-order conditions vanish at the fits; a violation means a first
    step silently failed and inference would be invalid.
    """
    ps = fit_logit_ipt(data.x, data.d)
    check_overlap(ps.fitted, data.d)
    or_fit = fit_or_wls(data.x, data.delta_y, data.d == 0, ps, subgroup="d=0,delta")
    moments = improved_moment_vectors(data, ps, or_fit)
    worst = max(float(np.max(np.abs(m))) for m in moments)
    if worst > MOMENT_TOL:
        raise MomentConditionError(
            f"moment conditions not satisfied at the fits (sup-norm {worst:.2e})"
        )
    att = _dr_point(data, ps, or_fit)
    eif = eif_dr_imp_panel(data, ps, or_fit, att)
    extra = _ps_diagnostics(ps, data.d)
    extra["moment_check_sup"] = worst
    return _if_estimate("dr_imp", data, att, eif, level, extra)


# ------------------------------------------------------------- dispatcher


def estimate_panel(
    data: PanelDataset, tags, cfg: EstimatorConfig, rng=None
) -> dict[str, AttEstimate | RobustDidError]:
    """Run the requested estimators, sharing first-step fits.

    Per-estimator failures are captured and returned in place of the
    estimate; a shared-fit failure only poisons the estimators that
    need that fit.
    """
    tags = list(tags)
    unknown = [t for t in tags if t not in PANEL_TAGS]
    if unknown:
        raise ValueError(f"unknown panel estimator tags: {unknown}")
    rng = np.random.default_rng(0) if rng is None else rng
    child_rngs = dict(zip(PANEL_TAGS, rng.spawn(len(PANEL_TAGS))))

    trimmed = 0
    if cfg.trim_threshold is not None:
        ps = _fit_ps(data.x, data.d, cfg.ps_method)
        keep = ps.fitted < cfg.trim_threshold
        trimmed = int(data.n - keep.sum())
        if trimmed:
            data = PanelDataset(
                data.y0[keep], data.y1[keep], data.d[keep], data.x[keep]
            )

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
            return att_twfe_panel(data, cfg.level)
        if tag == "reg":
            return att_or_panel(
                data,
                bootstrap_draws=cfg.bootstrap_draws,
                rng=child_rngs[tag],
                level=cfg.level,
            )
        if tag in ("ipw", "ipw_std"):
            ps = shared("ps", lambda: _fit_ps(data.x, data.d, cfg.ps_method))
            fn = att_ipw_std_panel if tag == "ipw_std" else att_ipw_panel
            return fn(
                data,
                ps,
                bootstrap_draws=cfg.bootstrap_draws,
                rng=child_rngs[tag],
                level=cfg.level,
            )
        if tag == "dr":
            ps = shared("ps", lambda: _fit_ps(data.x, data.d, cfg.ps_method))
            or_fit = shared(
                "or",
                lambda: fit_or_ols(
                    data.x, data.delta_y, data.d == 0, subgroup="d=0,delta"
                ),
            )
            return att_dr_panel(data, ps, or_fit, cfg.level)
        if tag == "dr_imp":
            return att_dr_imp_panel(data, cfg.level)
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
