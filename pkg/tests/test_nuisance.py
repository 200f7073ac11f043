import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from robustdid.errors import (
    AllTreatedOrAllControl,
    ExtremePropensity,
    InsufficientSubsample,
    Separation,
)
from robustdid.nuisance import (
    PropensityFit,
    fit_logit_ipt,
    fit_logit_mle,
    fit_or_ols,
    fit_or_wls,
)


def random_design(rng, n, k=2):
    return np.column_stack([np.ones(n), rng.standard_normal((n, k))])


def irls_oracle(x, d, iters=200):
    """Independent iteratively reweighted least squares implementation."""
    beta = np.zeros(x.shape[1])
    for _ in range(iters):
        p = expit(x @ beta)
        w = p * (1 - p)
        step = np.linalg.solve((x * w[:, None]).T @ x, x.T @ (d - p))
        beta = beta + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return beta


class TestLogitMle:
    def test_intercept_only_closed_form(self):
        x = np.ones((10, 1))
        d = np.array([1.0] * 3 + [0.0] * 7)
        fit = fit_logit_mle(x, d)
        np.testing.assert_allclose(fit.gamma, [np.log(3.0 / 7.0)], atol=1e-9)
        np.testing.assert_allclose(fit.fitted, 0.3, atol=1e-9)

    def test_perfect_separation_raises(self):
        x = np.column_stack([np.ones(10), np.repeat([0.0, 1.0], 5)])
        d = x[:, 1].copy()
        with pytest.raises(Separation):
            fit_logit_mle(x, d)

    def test_single_class_raises(self):
        x = np.ones((5, 1))
        with pytest.raises(AllTreatedOrAllControl):
            fit_logit_mle(x, np.ones(5))

    def test_matches_irls_oracle(self):
        x = np.column_stack([np.ones(8), np.array([-1, -1, -1, 0, 0, 1, 1, 1.0])])
        d = np.array([0, 1, 0, 0, 1, 1, 0, 1.0])
        fit = fit_logit_mle(x, d)
        np.testing.assert_allclose(fit.gamma, irls_oracle(x, d), atol=1e-8)

    def test_score_and_linearization_mean_zero(self):
        rng = np.random.default_rng(42)
        x = random_design(rng, 300, 3)
        d = (rng.random(300) < expit(x[:, 1] - 0.3 * x[:, 2])).astype(float)
        fit = fit_logit_mle(x, d)
        score = x.T @ (d - fit.fitted) / len(d)
        assert np.max(np.abs(score)) <= 1e-8
        assert np.max(np.abs(fit.linearization.mean(axis=0))) <= 1e-8


class TestLogitIpt:
    def test_intercept_only_closed_form(self):
        x = np.ones((10, 1))
        d = np.array([1.0] * 4 + [0.0] * 6)
        fit = fit_logit_ipt(x, d)
        np.testing.assert_allclose(np.exp(fit.gamma), [4.0 / 6.0], atol=1e-9)
        np.testing.assert_allclose(fit.fitted, 0.4, atol=1e-9)

    def test_exact_balance(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = random_design(rng, 120, 3)
            d = (rng.random(120) < expit(0.5 * x[:, 1])).astype(float)
            if d.sum() in (0, 120):
                continue
            fit = fit_logit_ipt(x, d)
            w0 = (1 - d) * np.exp(x @ fit.gamma)
            treated_mean = (d[:, None] * x).sum(axis=0) / d.sum()
            control_mean = (w0[:, None] * x).sum(axis=0) / w0.sum()
            np.testing.assert_allclose(treated_mean, control_mean, atol=1e-8)

    def test_matches_brute_force_maximizer(self):
        rng = np.random.default_rng(8)
        x = random_design(rng, 10, 2)
        d = np.array([1, 0, 1, 0, 0, 1, 0, 1, 0, 0.0])

        def neg_obj(g):
            z = x @ g
            return -float(np.mean(d * z - (1 - d) * np.exp(z)))

        # coarse grid scan, then a derivative-free polish from the best node
        grid = np.linspace(-3, 3, 13)
        best, best_val = None, np.inf
        for g0 in grid:
            for g1 in grid:
                for g2 in grid:
                    v = neg_obj(np.array([g0, g1, g2]))
                    if v < best_val:
                        best, best_val = np.array([g0, g1, g2]), v
        polish = minimize(
            neg_obj, best, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000},
        )
        fit = fit_logit_ipt(x, d)
        np.testing.assert_allclose(fit.gamma, polish.x, atol=1e-6)

    def test_intercept_only_agrees_with_mle(self):
        x = np.ones((12, 1))
        d = np.array([1.0] * 5 + [0.0] * 7)
        mle = fit_logit_mle(x, d)
        ipt = fit_logit_ipt(x, d)
        np.testing.assert_allclose(mle.fitted, ipt.fitted, atol=1e-10)

    def test_separation_raises(self):
        x = np.column_stack([np.ones(10), np.repeat([0.0, 1.0], 5)])
        d = x[:, 1].copy()
        with pytest.raises(Separation):
            fit_logit_ipt(x, d)


class TestOutcomeFits:
    def test_ols_intercept_mean(self):
        x = np.ones((3, 1))
        fit = fit_or_ols(x, np.array([1.0, 2.0, 3.0]), np.ones(3, dtype=bool))
        np.testing.assert_allclose(fit.beta, [2.0], rtol=1e-14)

    def test_ols_exact_fit_on_mask(self):
        rng = np.random.default_rng(1)
        x = random_design(rng, 30, 2)
        beta0 = np.array([1.0, -2.0, 0.5])
        y = x @ beta0
        mask = rng.random(30) < 0.6
        fit = fit_or_ols(x, y, mask)
        np.testing.assert_allclose(fit.beta, beta0, atol=1e-10)
        np.testing.assert_allclose(fit.fitted, y, atol=1e-9)

    def test_ols_masked_matches_hand_normal_equations(self):
        x = np.column_stack([np.ones(6), np.array([0.0, 1, 2, 3, 4, 5])])
        y = np.array([1.0, 2.0, 2.5, 4.0, 5.5, 5.0])
        mask = np.array([False, False, True, True, True, True])
        fit = fit_or_ols(x, y, mask)
        xs, ys = x[mask], y[mask]
        expect = np.linalg.solve(xs.T @ xs, xs.T @ ys)
        np.testing.assert_allclose(fit.beta, expect, rtol=1e-12)

    def test_ols_insufficient_subsample(self):
        x = np.column_stack([np.ones(5), np.arange(5.0)])
        mask = np.array([True, False, False, False, False])
        with pytest.raises(InsufficientSubsample):
            fit_or_ols(x, np.arange(5.0), mask)

    def test_ols_linearization_mean_zero(self):
        rng = np.random.default_rng(10)
        x = random_design(rng, 100, 2)
        y = x @ np.array([1.0, 2.0, -1.0]) + rng.standard_normal(100)
        mask = rng.random(100) < 0.5
        fit = fit_or_ols(x, y, mask)
        assert np.max(np.abs(fit.linearization.mean(axis=0))) <= 1e-8

    def test_wls_constant_propensity_equals_ols(self):
        rng = np.random.default_rng(2)
        xfull = random_design(rng, 20, 2)
        d = np.array([1.0] * 10 + [0.0] * 10)
        ps = PropensityFit("oracle", None, np.full(20, 0.5), None, True)
        y = rng.standard_normal(20)
        mask = d == 0
        # constant odds cancel out of the normal equations
        wls = fit_or_wls(xfull, y, mask, ps)
        ols = fit_or_ols(xfull, y, mask)
        np.testing.assert_allclose(wls.beta, ols.beta, rtol=1e-11, atol=1e-13)

    def test_wls_intercept_only_weighted_mean(self):
        rng = np.random.default_rng(4)
        fitted = expit(rng.standard_normal(12))
        ps = PropensityFit("oracle", None, fitted, None, True)
        ones = np.ones((12, 1))
        y = rng.standard_normal(12)
        mask = np.ones(12, dtype=bool)
        fit = fit_or_wls(ones, y, mask, ps)
        w = fitted / (1 - fitted)
        np.testing.assert_allclose(fit.beta, [np.sum(w * y) / np.sum(w)], rtol=1e-12)

    def test_wls_matches_weighted_lsq_oracle(self):
        from robustdid.numkit import weighted_lsq

        rng = np.random.default_rng(6)
        x = random_design(rng, 40, 2)
        d = (rng.random(40) < 0.5).astype(float)
        if d.sum() in (0, 40):
            d[0] = 1 - d[0]
        ps = fit_logit_mle(x, d)
        y = rng.standard_normal(40) * 3 + 5
        mask = d == 0
        fit = fit_or_wls(x, y, mask, ps)
        odds = ps.fitted / (1 - ps.fitted)
        expect = weighted_lsq(x[mask], y[mask], odds[mask])
        np.testing.assert_allclose(fit.beta, expect, rtol=1e-9, atol=1e-11)

    def test_wls_foc(self):
        rng = np.random.default_rng(16)
        x = random_design(rng, 200, 3)
        d = (rng.random(200) < expit(0.4 * x[:, 1])).astype(float)
        ps = fit_logit_ipt(x, d)
        y = 200 + x @ np.array([1.0, 5, -3, 2]) + rng.standard_normal(200)
        mask = d == 0
        fit = fit_or_wls(x, y, mask, ps)
        odds = np.exp(x @ ps.gamma)
        foc = (x[mask] * (odds[mask] * (y[mask] - fit.fitted[mask]))[:, None]).mean(axis=0)
        assert np.max(np.abs(foc)) <= 1e-8

    def test_wls_extreme_propensity(self):
        x = np.ones((6, 1))
        d = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        ps = fit_logit_mle(x, d)
        pinned = type(ps)(
            ps.method, ps.gamma, np.full(6, 1 - 1e-9), ps.linearization, True
        )
        with pytest.raises(ExtremePropensity):
            fit_or_wls(x, np.arange(6.0), d == 0, pinned)


class TestAffineInvariance:
    def test_fitted_index_invariant(self):
        rng = np.random.default_rng(25)
        x = random_design(rng, 150, 3)
        d = (rng.random(150) < expit(x[:, 1] - x[:, 3])).astype(float)
        shift = np.array([0.0, 2.0, -1.0, 0.5])
        mix = np.eye(4)
        mix[1:, 1:] = np.array([[2.0, 0.1, 0.0], [0.0, -1.0, 0.3], [0.2, 0.0, 0.5]])
        mix[0, 1:] = shift[1:]
        xt = x @ mix
        for fitter in (fit_logit_mle, fit_logit_ipt):
            f1 = fitter(x, d)
            f2 = fitter(xt, d)
            np.testing.assert_allclose(f1.fitted, f2.fitted, atol=1e-8)
