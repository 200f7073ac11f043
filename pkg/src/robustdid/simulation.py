"""Data generating processes and the Monte Carlo experiment runner.

Four designs share one outcome/propensity template and differ only in
whether the linear indices use the latent normal draws or their observed
nonlinear transforms. Estimation always sees the transformed covariates, so
the design id controls which working models are correctly specified:

    dgp 1: outcome and propensity both linear in the observed covariates
    dgp 2: outcome correct, propensity misspecified
    dgp 3: outcome misspecified, propensity correct
    dgp 4: both misspecified

Randomness comes from counter-based streams keyed by (seed, replication,
purpose), with normals through the inverse CDF, so every replication is
reproducible under any parallel schedule.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtri

from .data import AttEstimate, PanelDataset, RcDataset
from .errors import DegenerateTreatment, EmptyCell, SimulationFailure
from .inference import z_value
from .panel import PANEL_TAGS, EstimatorConfig, estimate_panel
from .rc import RC_TAGS, estimate_rc

# Purpose tags for stream keying.
TAG_DGP = 1
TAG_EST = 2
TAG_BOUND = 3

# Standardization constants for the observed covariates: each transform is
# centered and scaled by its population mean and standard deviation.
#   col 1: exp(0.5*N) is lognormal -> mean e^{1/8}, var (e^{1/4}-1)e^{1/4}
#   col 2: 10 + N/(1+e^N') -> mean 10, var E[(1+e^N')^{-2}] by quadrature
#   col 3: (0.6 + N*N'/25)^3 -> polynomial in product-normal moments
#   col 4: (20 + N + N')^2 -> polynomial in N(0,2) moments; couples to col 1
#          through the shared latent draw
Z_MEAN = (math.exp(0.125), 10.0, 0.21888, 402.0)
Z_SD = (
    math.sqrt((math.exp(0.25) - 1.0) * math.exp(0.25)),
    math.sqrt(0.29337903585809294),
    math.sqrt(0.0019832832),
    math.sqrt(3208.0),
)

MAX_RESAMPLES = 100


def f_reg(w: np.ndarray) -> np.ndarray:
    """Outcome index: affine in the four coordinates."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return 210.0 + 27.4 * w[:, 0] + 13.7 * (w[:, 1] + w[:, 2] + w[:, 3])


def f_ps(w: np.ndarray) -> np.ndarray:
    """Propensity index: affine in the four coordinates."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return 0.75 * (-w[:, 0] + 0.5 * w[:, 1] - 0.25 * w[:, 2] - 0.1 * w[:, 3])


def stream(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _uniform_open(rng, size):
    u = rng.random(size)
    # inverse-CDF normals need u strictly inside (0, 1)
    return np.where(u == 0.0, 0.5**53, u)


def _std_normal(rng, size):
    return ndtri(_uniform_open(rng, size))


def gen_latent(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Latent standard normals and their standardized nonlinear transforms."""
    x = _std_normal(rng, (n, 4))
    raw = np.empty_like(x)
    raw[:, 0] = np.exp(0.5 * x[:, 0])
    raw[:, 1] = 10.0 + x[:, 1] / (1.0 + np.exp(x[:, 0]))
    raw[:, 2] = (0.6 + x[:, 0] * x[:, 2] / 25.0) ** 3
    raw[:, 3] = (20.0 + x[:, 0] + x[:, 3]) ** 2
    z = (raw - np.asarray(Z_MEAN)) / np.asarray(Z_SD)
    return x, z


def draw_panel_arrays(dgp_id: int, n: int, rng) -> dict[str, np.ndarray]:
    """One panel draw: latent covariates, treatment, both potential periods.

    The unit effect is normal with mean equal to the treated outcome index,
    so it shifts levels by group without touching outcome changes.
    """
    if dgp_id not in (1, 2, 3, 4):
        raise ValueError("dgp_id must be 1..4")
    x, z = gen_latent(n, rng)
    reg_idx = z if dgp_id in (1, 2) else x
    ps_idx = z if dgp_id in (1, 3) else x
    freg = f_reg(reg_idx)
    p = expit(f_ps(ps_idx))
    u_d = _uniform_open(rng, n)
    d = (p >= u_d).astype(float)
    v = d * freg + _std_normal(rng, n)
    eps0 = _std_normal(rng, n)
    eps1 = _std_normal(rng, n)
    y0 = freg + v + eps0
    y1 = 2.0 * freg + v + eps1
    return {
        "x": x,
        "z": z,
        "freg": freg,
        "p": p,
        "d": d,
        "v": v,
        "y0": y0,
        "y1": y1,
    }


@dataclass(frozen=True)
class DgpSpec:
    dgp_id: int
    design: str  # "panel" or "rc"
    n: int
    seed: int
    lam: float = 0.5

    def __post_init__(self):
        if self.dgp_id not in (1, 2, 3, 4):
            raise ValueError("dgp_id must be 1..4")
        if self.design not in ("panel", "rc"):
            raise ValueError("design must be 'panel' or 'rc'")
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")


def _observed_design(z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(z)), z])


def gen_dgp_panel(spec: DgpSpec, rng=None) -> PanelDataset:
    """Panel dataset observing the transformed covariates."""
    rng = stream(spec.seed, 0, TAG_DGP) if rng is None else rng
    for attempt in range(MAX_RESAMPLES):
        arrays = draw_panel_arrays(spec.dgp_id, spec.n, rng)
        if 0.0 < arrays["d"].mean() < 1.0:
            return PanelDataset(
                arrays["y0"],
                arrays["y1"],
                arrays["d"],
                _observed_design(arrays["z"]),
                resamples=attempt,
            )
    raise DegenerateTreatment("treatment degenerate in every resample attempt")


def gen_dgp_rc(spec: DgpSpec, rng=None) -> RcDataset:
    """Pooled cross-section dataset: each unit is seen in one period only."""
    rng = stream(spec.seed, 0, TAG_DGP) if rng is None else rng
    for attempt in range(MAX_RESAMPLES):
        arrays = draw_panel_arrays(spec.dgp_id, spec.n, rng)
        t = (_uniform_open(rng, spec.n) <= spec.lam).astype(float)
        d = arrays["d"]
        cells_ok = all(
            np.any((d == dv) & (t == tv)) for dv in (0, 1) for tv in (0, 1)
        )
        if cells_ok:
            y = t * arrays["y1"] + (1.0 - t) * arrays["y0"]
            return RcDataset(
                y, t, d, _observed_design(arrays["z"]), resamples=attempt
            )
    raise EmptyCell("a treatment-period cell was empty in every resample attempt")


@dataclass(frozen=True)
class McSummary:
    estimator: str
    reps: int
    avg_bias: float
    med_bias: float
    rmse: float
    mean_asy_var: float
    coverage: float
    ci_length: float
    mc_se_of_bias: float
    failures: int


def _mc_worker(job) -> list[tuple[str, float, float, str]]:
    (dgp_id, design, n, seed, lam, rep, tags, ps_method, draws, level) = job
    spec = DgpSpec(dgp_id, design, n, seed, lam)
    gen_rng = stream(seed, rep, TAG_DGP)
    est_rng = stream(seed, rep, TAG_EST)
    cfg = EstimatorConfig(ps_method=ps_method, bootstrap_draws=draws, level=level)
    if design == "panel":
        data = gen_dgp_panel(spec, gen_rng)
        results = estimate_panel(data, tags, cfg, est_rng)
    else:
        data = gen_dgp_rc(spec, gen_rng)
        results = estimate_rc(data, tags, cfg, est_rng)
    out = []
    for tag in tags:
        got = results[tag]
        if isinstance(got, AttEstimate):
            out.append((tag, got.att, got.se, ""))
        else:
            out.append((tag, float("nan"), float("nan"), str(got)))
    return out


def run_mc(
    spec: DgpSpec,
    estimators,
    reps: int,
    parallel: int = 1,
    *,
    ps_method: str = "mle",
    bootstrap_draws: int = 999,
    level: float = 0.95,
    failure_threshold: float = 0.01,
) -> list[McSummary]:
    """Monte Carlo experiment: summaries per estimator over ``reps`` draws.

    Output depends only on (spec, estimators, reps, config), never on the
    parallel degree: every replication owns streams keyed by its index and
    summaries reduce in replication order.
    """
    tags = tuple(estimators)
    valid = PANEL_TAGS if spec.design == "panel" else RC_TAGS
    unknown = [t for t in tags if t not in valid]
    if unknown:
        raise ValueError(f"unknown estimator tags for {spec.design}: {unknown}")
    jobs = [
        (
            spec.dgp_id,
            spec.design,
            spec.n,
            spec.seed,
            spec.lam,
            rep,
            tags,
            ps_method,
            bootstrap_draws,
            level,
        )
        for rep in range(reps)
    ]
    if parallel > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_mc_worker, jobs, chunksize=max(1, reps // (8 * parallel))))
    else:
        rows = [_mc_worker(job) for job in jobs]

    z = z_value(level)
    summaries = []
    for idx, tag in enumerate(tags):
        atts = np.array([row[idx][1] for row in rows])
        ses = np.array([row[idx][2] for row in rows])
        ok = np.isfinite(atts) & np.isfinite(ses)
        failures = int(reps - ok.sum())
        if failures > failure_threshold * reps:
            raise SimulationFailure(
                f"estimator {tag!r} failed in {failures}/{reps} replications"
            )
        atts, ses = atts[ok], ses[ok]
        covered = np.abs(atts) <= z * ses
        summaries.append(
            McSummary(
                estimator=tag,
                reps=int(ok.sum()),
                avg_bias=float(atts.mean()),
                med_bias=float(np.median(atts)),
                rmse=float(np.sqrt(np.mean(atts**2))),
                mean_asy_var=float(np.mean(spec.n * ses**2)),
                coverage=float(covered.mean()),
                ci_length=float(np.mean(2.0 * z * ses)),
                mc_se_of_bias=float(atts.std(ddof=1) / np.sqrt(len(atts)))
                if len(atts) > 1
                else 0.0,
                failures=failures,
            )
        )
    return summaries
