import numpy as np
import pytest
from scipy.special import expit

from robustdid.data import RcDataset
from robustdid.errors import EmptyCell
from robustdid.nuisance import fit_logit_mle, fit_or_ols
from robustdid.panel import EstimatorConfig
from robustdid.rc import (
    att_dr1_imp_rc,
    att_dr1_rc,
    att_dr2_imp_rc,
    att_dr2_rc,
    att_ipw_rc,
    att_ipw_std_rc,
    att_or_rc,
    att_twfe_rc,
    estimate_rc,
    fit_logit_ipt_period,
    rc_weights,
    _control_fits_ols,
    _treated_fits_ols,
)


def cell_data(counts, means, rng=None, spread=0.0):
    """Intercept-only dataset with given (11, 10, 01, 00) cell counts/means."""
    n11, n10, n01, n00 = counts
    m11, m10, m01, m00 = means
    d = np.concatenate([np.ones(n11 + n10), np.zeros(n01 + n00)])
    t = np.concatenate([np.ones(n11), np.zeros(n10), np.ones(n01), np.zeros(n00)])
    y = np.concatenate(
        [np.full(n11, m11), np.full(n10, m10), np.full(n01, m01), np.full(n00, m00)]
    ).astype(float)
    if spread:
        y = y + spread * (rng or np.random.default_rng(0)).standard_normal(len(y))
    return RcDataset(y, t, d, np.ones((len(y), 1)))


def did_of_cell_means(data):
    y, d, t = data.y, data.d, data.t
    m = lambda dv, tv: y[(d == dv) & (t == tv)].mean()
    return (m(1, 1) - m(1, 0)) - (m(0, 1) - m(0, 0))


def random_rc(rng, n=120, k=2):
    x = np.column_stack([np.ones(n), rng.standard_normal((n, k))])
    d = (rng.random(n) < expit(0.5 * x[:, 1])).astype(float)
    t = (rng.random(n) < 0.5).astype(float)
    # force all four cells nonempty
    d[:4] = [1, 1, 0, 0]
    t[:4] = [1, 0, 1, 0]
    y = 3 + x @ rng.standard_normal(k + 1) + 2 * t + d + rng.standard_normal(n)
    return RcDataset(y, t, d, x)


BALANCED = (2, 2, 3, 3)  # cell shares factorize: n_dt = n_d * n_t / n
UNBALANCED = (2, 3, 3, 4)
MEANS = (9.0, 4.0, 3.0, 1.0)  # DID = (9-4) - (3-1) = 3


class TestWeights:
    def test_sums_and_support(self):
        rng = np.random.default_rng(0)
        data = random_rc(rng)
        ps = fit_logit_mle(data.x, data.d)
        odds = np.exp(data.x @ ps.gamma)
        w = rc_weights(data.d, data.t, odds, odds)
        for name, vec, dv, tv in (
            ("w11", w.w11, 1, 1),
            ("w10", w.w10, 1, 0),
            ("w01", w.w01, 0, 1),
            ("w00", w.w00, 0, 0),
        ):
            assert abs(vec.sum() - 1.0) <= 1e-12, name
            off_cell = ~((data.d == dv) & (data.t == tv))
            assert np.all(vec[off_cell] == 0.0), name


class TestTwfe:
    def test_saturated_cell_means(self):
        data = cell_data(UNBALANCED, MEANS)
        est = att_twfe_rc(data)
        assert abs(est.att - 3.0) <= 1e-10

    def test_matches_direct_ols_oracle(self):
        rng = np.random.default_rng(1)
        data = random_rc(rng, n=8, k=1)
        design = np.column_stack(
            [np.ones(8), data.t, data.d, data.t * data.d, data.x[:, 1]]
        )
        beta, *_ = np.linalg.lstsq(design, data.y, rcond=None)
        assert abs(att_twfe_rc(data).att - beta[3]) <= 1e-10


class TestOutcomeRegression:
    def test_intercept_only_is_did(self):
        data = cell_data(UNBALANCED, MEANS)
        est = att_or_rc(data, bootstrap_draws=20, rng=np.random.default_rng(0))
        assert abs(est.att - 3.0) <= 1e-12

    def test_exact_linear_no_effect_gives_zero(self):
        # treated covariates mirrored across periods so the exact-fit world
        # has no finite-sample covariate imbalance between treated cells
        rng = np.random.default_rng(2)
        xt = rng.standard_normal(8)
        xc = rng.standard_normal(14)
        xcol = np.concatenate([xt, xt, xc])
        t = np.concatenate([np.ones(8), np.zeros(8), (rng.random(14) < 0.5).astype(float)])
        t[16:18] = [1.0, 0.0]
        d = np.concatenate([np.ones(16), np.zeros(14)])
        x = np.column_stack([np.ones(30), xcol])
        # equal slopes and equal trends in both groups, no effect
        y = 1.0 + 2.0 * xcol + 3.0 * t
        data = RcDataset(y, t, d, x)
        est = att_or_rc(data, bootstrap_draws=20, rng=np.random.default_rng(0))
        assert abs(est.att) <= 1e-10

    def test_twelve_row_hand_oracle(self):
        rng = np.random.default_rng(3)
        data = random_rc(rng, n=12, k=1)
        fits = {
            tv: fit_or_ols(data.x, data.y, (data.d == 0) & (data.t == tv))
            for tv in (0, 1)
        }
        treated = data.d == 1
        oracle = (
            data.y[treated & (data.t == 1)].mean()
            - data.y[treated & (data.t == 0)].mean()
            - np.mean(fits[1].fitted[treated] - fits[0].fitted[treated])
        )
        est = att_or_rc(data, bootstrap_draws=10, rng=np.random.default_rng(0))
        assert abs(est.att - oracle) <= 1e-12


class TestIpw:
    def test_zero_outcomes_give_zero(self):
        data = cell_data(UNBALANCED, (0.0, 0.0, 0.0, 0.0))
        ps = fit_logit_mle(data.x, data.d)
        est = att_ipw_rc(data, ps, bootstrap_draws=20, rng=np.random.default_rng(0))
        assert est.att == 0.0

    def test_eight_row_direct_formula(self):
        rng = np.random.default_rng(4)
        data = random_rc(rng, n=8, k=1)
        ps = fit_logit_mle(data.x, data.d)
        est = att_ipw_rc(data, ps, bootstrap_draws=10, rng=np.random.default_rng(0))
        lam = data.t.mean()
        pi = ps.fitted
        oracle = np.mean(
            (data.d - pi) / (1 - pi) * (data.t - lam) / (lam * (1 - lam)) * data.y
        ) / np.mean(data.d)
        assert abs(est.att - oracle) <= 1e-12

    def test_ht_collapses_only_with_factorizing_cells(self):
        balanced = cell_data(BALANCED, MEANS)
        ps = fit_logit_mle(balanced.x, balanced.d)
        est = att_ipw_rc(balanced, ps, bootstrap_draws=10, rng=np.random.default_rng(0))
        assert abs(est.att - 3.0) <= 1e-10
        unbalanced = cell_data(UNBALANCED, MEANS)
        ps = fit_logit_mle(unbalanced.x, unbalanced.d)
        est = att_ipw_rc(unbalanced, ps, bootstrap_draws=10, rng=np.random.default_rng(0))
        assert abs(est.att - 3.0) > 1e-6  # population-style period weights

    def test_hajek_intercept_only_is_did(self):
        data = cell_data(UNBALANCED, MEANS)
        ps = fit_logit_mle(data.x, data.d)
        est = att_ipw_std_rc(data, ps, bootstrap_draws=10, rng=np.random.default_rng(0))
        assert abs(est.att - 3.0) <= 1e-12

    def test_hajek_weight_scaling_invariance(self):
        rng = np.random.default_rng(5)
        data = random_rc(rng)
        ps = fit_logit_mle(data.x, data.d)
        est = att_ipw_std_rc(data, ps, bootstrap_draws=0, rng=np.random.default_rng(0))
        odds = np.exp(data.x @ ps.gamma)
        w = rc_weights(data.d, data.t, 7.3 * odds, 7.3 * odds)
        oracle = float(
            np.sum((w.treated_contrast - w.control_contrast) * data.y)
        )
        assert abs(est.att - oracle) <= 1e-12


class TestDoublyRobust:
    def test_dr1_intercept_only_is_did(self):
        data = cell_data(UNBALANCED, MEANS)
        ps = fit_logit_mle(data.x, data.d)
        or_c = _control_fits_ols(data)
        est = att_dr1_rc(data, ps, or_c[0], or_c[1])
        assert abs(est.att - 3.0) <= 1e-10

    def test_dr1_constant_outcome_gives_zero(self):
        rng = np.random.default_rng(6)
        base = random_rc(rng, n=40)
        data = RcDataset(np.full(40, 5.0), base.t, base.d, base.x)
        ps = fit_logit_mle(data.x, data.d)
        or_c = _control_fits_ols(data)
        est = att_dr1_rc(data, ps, or_c[0], or_c[1])
        assert abs(est.att) <= 1e-12

    def test_dr1_twelve_row_formula_oracle(self):
        rng = np.random.default_rng(7)
        data = random_rc(rng, n=12, k=1)
        ps = fit_logit_mle(data.x, data.d)
        or_c = _control_fits_ols(data)
        est = att_dr1_rc(data, ps, or_c[0], or_c[1])
        odds = ps.fitted / (1 - ps.fitted)
        w = rc_weights(data.d, data.t, odds, odds)
        mu0y = data.t * or_c[1].fitted + (1 - data.t) * or_c[0].fitted
        oracle = float(
            np.sum(
                (w.treated_contrast - w.control_contrast) * (data.y - mu0y)
            )
        )
        assert abs(est.att - oracle) <= 1e-12

    def test_dr2_intercept_only_equals_dr1(self):
        data = cell_data(UNBALANCED, MEANS)
        ps = fit_logit_mle(data.x, data.d)
        or_c = _control_fits_ols(data)
        or_t = _treated_fits_ols(data)
        est1 = att_dr1_rc(data, ps, or_c[0], or_c[1])
        est2 = att_dr2_rc(data, ps, or_c, or_t)
        assert abs(est2.att - est1.att) <= 1e-12
        assert abs(est2.att - 3.0) <= 1e-10

    def test_dr2_small_sample_formula_oracle(self):
        rng = np.random.default_rng(8)
        data = random_rc(rng, n=16, k=1)
        ps = fit_logit_mle(data.x, data.d)
        or_c = _control_fits_ols(data)
        or_t = _treated_fits_ols(data)
        est = att_dr2_rc(data, ps, or_c, or_t)
        odds = ps.fitted / (1 - ps.fitted)
        w = rc_weights(data.d, data.t, odds, odds)
        mu0y = data.t * or_c[1].fitted + (1 - data.t) * or_c[0].fitted
        dr1 = np.sum((w.treated_contrast - w.control_contrast) * (data.y - mu0y))
        share = data.d / data.d.sum()
        corr = np.sum((share - w.w11) * (or_t[1].fitted - or_c[1].fitted)) - np.sum(
            (share - w.w10) * (or_t[0].fitted - or_c[0].fitted)
        )
        assert abs(est.att - (dr1 + corr)) <= 1e-12


class TestImproved:
    def test_intercept_only_all_collapse(self):
        data = cell_data(UNBALANCED, MEANS)
        est1 = att_dr1_imp_rc(data)
        est2 = att_dr2_imp_rc(data)
        assert abs(est1.att - 3.0) <= 1e-10
        assert abs(est2.att - est1.att) <= 1e-12

    def test_period_tilts_balance_within_period(self):
        rng = np.random.default_rng(9)
        data = random_rc(rng, n=200)
        for tv in (0, 1):
            ps = fit_logit_ipt_period(data, tv)
            in_t = data.t == tv
            d, x = data.d[in_t], data.x[in_t]
            odds = np.exp(x @ ps.gamma)
            treated_mean = (d[:, None] * x).sum(axis=0) / d.sum()
            w0 = (1 - d) * odds
            tilted_mean = (w0[:, None] * x).sum(axis=0) / w0.sum()
            np.testing.assert_allclose(treated_mean, tilted_mean, atol=1e-8)

    def test_est_effect_vanishes_at_improved_fits(self):
        from robustdid.inference import eif_dr_rc
        from robustdid.rc import _improved_first_steps

        rng = np.random.default_rng(10)
        data = random_rc(rng, n=300)
        ps, or_c = _improved_first_steps(data)
        or_t = _treated_fits_ols(data)
        for j, kw in ((1, {}), (2, {"or_t_pre": or_t[0], "or_t_post": or_t[1]})):
            on = eif_dr_rc(j, data, ps[0], ps[1], or_c[0], or_c[1], **kw)
            off = eif_dr_rc(
                j, data, ps[0], ps[1], or_c[0], or_c[1], **kw, include_est_effect=False
            )
            assert np.max(np.abs(on.values - off.values)) <= 1e-7

    def test_se_with_and_without_corrections_agree(self):
        rng = np.random.default_rng(11)
        data = random_rc(rng, n=300)
        est = att_dr1_imp_rc(data)
        from robustdid.inference import eif_dr_rc, se_ci_from_eif
        from robustdid.rc import _improved_first_steps

        ps, or_c = _improved_first_steps(data)
        eif = eif_dr_rc(1, data, ps[0], ps[1], or_c[0], or_c[1], include_est_effect=True)
        se_on, _ = se_ci_from_eif(eif, data.n, est.att)
        assert abs(se_on - est.se) <= 1e-7 * max(est.se, 1e-12)


class TestCollapseInvariant:
    def test_all_eight_on_factorizing_cells(self):
        rng = np.random.default_rng(12)
        data = cell_data((4, 4, 6, 6), MEANS, rng=rng, spread=0.5)
        cfg = EstimatorConfig(bootstrap_draws=0)
        res = estimate_rc(
            data,
            ("twfe", "reg", "ipw", "ipw_std", "dr1", "dr2", "dr1_imp", "dr2_imp"),
            cfg,
            np.random.default_rng(0),
        )
        did = did_of_cell_means(data)
        for tag, est in res.items():
            assert abs(est.att - did) <= 1e-10, tag

    def test_seven_on_unbalanced_cells(self):
        rng = np.random.default_rng(13)
        data = cell_data((4, 5, 7, 6), MEANS, rng=rng, spread=0.5)
        cfg = EstimatorConfig(bootstrap_draws=0)
        tags = ("twfe", "reg", "ipw_std", "dr1", "dr2", "dr1_imp", "dr2_imp")
        res = estimate_rc(data, tags, cfg, np.random.default_rng(0))
        did = did_of_cell_means(data)
        for tag in tags:
            assert abs(res[tag].att - did) <= 1e-10, tag


class TestDataset:
    def test_empty_cell_rejected(self):
        with pytest.raises(EmptyCell):
            RcDataset(
                np.zeros(6),
                np.array([1, 1, 1, 0, 0, 0.0]),
                np.array([1, 1, 1, 0, 0, 0.0]),
                np.ones((6, 1)),
            )

    def test_lambda_hat(self):
        data = cell_data(UNBALANCED, MEANS)
        n11, n10, n01, n00 = UNBALANCED
        assert data.lambda_hat == (n11 + n01) / (n11 + n10 + n01 + n00)
