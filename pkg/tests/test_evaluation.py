import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special, stats

from damm.densities import GaussianParams
from damm.errors import SpecError
from damm.estimation import EstimationConfig, _initial_partition, _m_step, em_static_mixture, fit_ml
from damm.evaluation import (
    GaussianMixturePath,
    MetricReport,
    _em_univariate,
    akl,
    avg_frobenius,
    dgt_ar_test,
    dgt_hist_test,
    ewma_corr,
    gaussian_kl,
    log_score,
    mae_mse,
    mmr_rolling,
    ms_two_state_filter,
    pit_series,
    simulated_corr,
)
from damm.model import GasCoefficients, ModelSpec
from damm.simulation import simulate_mixfix


def single_gaussian_path(means, variances):
    means = np.asarray(means, float)[:, None]
    return GaussianMixturePath(np.ones_like(means), means, np.asarray(variances, float)[:, None])


def ewma_reference(y, lam):
    q = np.corrcoef(y.T)
    out = [q[0, 1]]
    for t in range(1, y.shape[0]):
        q = lam * q + (1 - lam) * np.outer(y[t - 1], y[t - 1])
        out.append(q[0, 1] / math.sqrt(q[0, 0] * q[1, 1]))
    return np.array(out)


def hamilton_reference(y, comps, P):
    dens = np.column_stack([stats.norm.pdf(y, c.mean, math.sqrt(c.variance)) for c in comps])
    pi = np.array([P[1, 0], P[0, 1]]) / (P[0, 1] + P[1, 0])
    pred, ll = [], 0.0
    for t in range(y.size):
        pred.append(pi[0])
        joint = pi * dens[t]
        ll += math.log(joint.sum())
        pi = (joint / joint.sum()) @ P
    return np.array(pred), ll


class TestPointMetrics:
    def test_mae_mse(self):
        assert mae_mse([1.0, 2.0, 4.0], [1.0, 1.0, 1.0]) == (4 / 3, 10 / 3)

    def test_frobenius(self):
        truth = np.array([[[1.0, 0.5], [0.5, 1.0]]] * 3)
        est = truth.copy()
        est[:, 0, 1] += 0.1
        est[:, 1, 0] += 0.1
        assert_allclose(avg_frobenius(est, truth), math.sqrt(0.02))

    def test_shape_checks(self):
        with pytest.raises(SpecError):
            mae_mse([1.0], [1.0, 2.0])
        with pytest.raises(SpecError):
            avg_frobenius(np.zeros((3, 2)), np.zeros((3, 2)))

    def test_report_median_skips_failures(self):
        assert MetricReport("mae", [1.0, np.nan, 3.0, 2.0]).median == 2.0
        assert math.isnan(MetricReport("mae", [np.nan]).median)


class TestAkl:
    def test_equals_gaussian_kl(self):
        p = single_gaussian_path([0.0], [1.0])
        q = single_gaussian_path([0.0], [2.0])
        assert abs(akl(p, q) - 0.0965735902799727) < 1e-7

    def test_time_average(self):
        p = single_gaussian_path([0.0, 1.0], [1.0, 0.5])
        q = single_gaussian_path([0.5, 1.0], [1.5, 0.4])
        expected = 0.5 * (gaussian_kl(0.0, 1.0, 0.5, 1.5) + gaussian_kl(1.0, 0.5, 1.0, 0.4))
        assert abs(akl(p, q) - expected) < 1e-7

    def test_zero_for_identical_mixtures(self):
        p = GaussianMixturePath([[0.3, 0.7]], [[-2.0, 1.0]], [[0.5, 2.0]])
        assert akl(p, p) < 1e-10

    def test_mixture_kl_is_positive(self):
        p = GaussianMixturePath([[0.5, 0.5]], [[-2.0, 2.0]], [[1.0, 1.0]])
        q = single_gaussian_path([0.0], [5.0])
        assert akl(p, q) > 0

    def test_mixture_logpdf(self):
        p = GaussianMixturePath([[0.3, 0.7]], [[-2.0, 1.0]], [[0.5, 2.0]])
        expected = np.log(0.3 * stats.norm.pdf(0.4, -2, math.sqrt(0.5)) + 0.7 * stats.norm.pdf(0.4, 1, math.sqrt(2)))
        assert_allclose(p.logpdf([0.4]), [expected])

    def test_length_mismatch(self):
        with pytest.raises(SpecError):
            akl(single_gaussian_path([0.0], [1.0]), single_gaussian_path([0.0, 1.0], [1.0, 1.0]))


class TestDgt:
    def test_autocorrelated_pits_are_rejected(self):
        rng = np.random.default_rng(0)
        x = np.empty(2000)
        x[0] = rng.standard_normal()
        for t in range(1, 2000):
            x[t] = 0.5 * x[t - 1] + math.sqrt(0.75) * rng.standard_normal()
        stat, reject = dgt_ar_test(special.ndtr(x), k=1)
        assert reject and stat > 100

    def test_ar_statistic_is_lm_form(self):
        # (T - lags) R^2 from an independent least-squares fit
        rng = np.random.default_rng(1)
        u = rng.random(500)
        x = u**2 - np.mean(u**2)
        X = np.column_stack([np.ones(480)] + [x[20 - i : 500 - i] for i in range(1, 21)])
        target = x[20:]
        fitted = X @ np.linalg.solve(X.T @ X, X.T @ target)
        r2 = 1 - np.sum((target - fitted) ** 2) / np.sum(target**2)
        assert_allclose(dgt_ar_test(u, k=2)[0], 480 * r2, rtol=1e-9)

    def test_histogram_statistic(self):
        centres = (np.arange(20) + 0.5) / 20
        assert dgt_hist_test(np.repeat(centres, 10)) == (0.0, False)
        stat, reject = dgt_hist_test(np.full(200, 0.5))
        assert_allclose(stat, (200 - 10) ** 2 / 10 + 19 * 10)
        assert reject

    def test_argument_checks(self):
        with pytest.raises(SpecError):
            dgt_ar_test(np.random.default_rng(0).random(100), k=5)
        with pytest.raises(SpecError):
            dgt_ar_test(np.random.default_rng(0).random(40))
        with pytest.raises(SpecError):
            dgt_hist_test(np.full(10, 0.5))

    def test_pit_series_of_static_gaussian(self):
        y = np.random.default_rng(2).normal(1.0, 2.0, 300)
        fit = fit_ml(ModelSpec("uni-gaussian", J=1, frozen_blocks=frozenset({"mean", "scale"})), y, EstimationConfig(restarts=1))
        u, clamped = pit_series(fit, y)
        mu, lv = fit.coefficients.kappa
        assert_allclose(u, stats.norm.cdf(y, mu, math.exp(0.5 * lv)), rtol=1e-10)
        assert clamped == 0


class TestLogScore:
    def test_known_coefficients(self):
        y = np.random.default_rng(3).standard_normal(300)
        spec = ModelSpec("uni-gaussian", J=1)
        rep = log_score(spec, y, 100, window=100, coefficients=GasCoefficients.static([0.0, 0.0]))
        assert_allclose(rep.contributions, stats.norm.logpdf(y[100:]))
        assert rep.refits == 0
        assert_allclose(rep.mean, np.mean(stats.norm.logpdf(y[100:])))

    def test_refits_on_schedule(self):
        y = np.random.default_rng(4).standard_normal(260)
        spec = ModelSpec("uni-gaussian", J=1, frozen_blocks=frozenset({"mean", "scale"}))
        rep = log_score(spec, y, 100, window=100, refit_every=80, config=EstimationConfig(restarts=1))
        assert rep.refits == 2 and rep.contributions.size == 160
        # the first block uses the MLE of y[0:100]
        m, v = y[:100].mean(), y[:100].var()
        assert_allclose(rep.contributions[:80], stats.norm.logpdf(y[100:180], m, math.sqrt(v)), rtol=1e-5)

    def test_bad_start(self):
        with pytest.raises(SpecError):
            log_score(ModelSpec("uni-gaussian", J=1), np.zeros(50), 10, window=20)


class TestEwma:
    def test_matches_loop(self):
        y = np.random.default_rng(5).multivariate_normal([0, 0], [[1, 0.4], [0.4, 1]], size=300)
        assert_allclose(ewma_corr(y), ewma_reference(y, 0.96), rtol=1e-10)

    def test_first_value_is_sample_correlation(self):
        y = np.random.default_rng(6).normal(size=(50, 2))
        assert_allclose(ewma_corr(y, 0.9)[0], np.corrcoef(y.T)[0, 1])

    def test_argument_checks(self):
        with pytest.raises(SpecError):
            ewma_corr(np.zeros((10, 2)), lam=1.0)
        with pytest.raises(SpecError):
            ewma_corr(np.zeros((10, 3)))


class TestMmr:
    def test_full_window_matches_static_em(self):
        rng = np.random.default_rng(7)
        y = np.concatenate([rng.normal(-3, 1, 150), rng.normal(2, 1.5, 250)])
        rng.shuffle(y)
        roll = mmr_rolling(y, K=y.size)
        assert np.all(np.isnan(roll.weights[:-1]))
        ref = em_static_mixture(y, 2, tol=1e-12)
        o1, o2 = np.argsort(roll.means[-1]), np.argsort(ref.means[:, 0])
        assert_allclose(roll.means[-1, o1], ref.means[o2, 0], atol=1e-3)
        assert_allclose(roll.weights[-1, o1], ref.weights[o2], atol=1e-3)

    def test_compiled_em_matches_static_em(self):
        rng = np.random.default_rng(8)
        y = np.concatenate([rng.normal(-2, 1, 100), rng.normal(2, 1, 100)])
        ref = em_static_mixture(y, 2, tol=1e-12)
        w0, m0, v0 = _m_step(y[:, None], _initial_partition(y[:, None], 2))
        w, m, v, ll, it, status = _em_univariate(y, w0, m0[:, 0], v0[:, 0, 0], 1000, 1e-12, 1.0)
        assert status == 0
        assert_allclose(ll, ref.loglik, rtol=1e-10)
        assert_allclose(m, ref.means[:, 0], rtol=1e-6)
        assert_allclose(w, ref.weights, rtol=1e-6)

    def test_rows_and_warm_start(self):
        y = simulate_mixfix(np.full(300, 0.5), seed=9)
        roll = mmr_rolling(y, K=100)
        assert np.all(np.isnan(roll.weights[:99]))
        assert np.all(np.isfinite(roll.weights[99:]))
        assert_allclose(roll.weights[99:].sum(axis=1), 1.0)
        assert not roll.failed.any()

    def test_collapsed_first_window_is_flagged_not_fatal(self):
        y = np.concatenate([np.zeros(100), simulate_mixfix(np.full(200, 0.5), seed=11)])
        roll = mmr_rolling(y, K=100)
        assert roll.failed[99]
        assert_allclose(roll.weights[99], [0.5, 0.5])
        assert_allclose(roll.means[99], 0.0)
        assert np.all(np.isfinite(roll.weights[99:]))
        assert not roll.failed[-1]

    def test_fixed_components_estimate_weights_only(self):
        y = simulate_mixfix(np.full(400, 0.8), seed=10)
        roll = mmr_rolling(y, K=400, fixed_components=([-4.0, 1.0], [6.0, 3.0]))
        assert_allclose(roll.means[-1], [-4.0, 1.0])
        assert abs(roll.weights[-1, 0] - 0.8) < 0.08

    def test_window_longer_than_sample(self):
        with pytest.raises(SpecError):
            mmr_rolling(np.zeros(10), K=20)


class TestMarkovSwitching:
    def test_filter_matches_reference(self):
        comps = [GaussianParams(-4.0, 6.0), GaussianParams(1.0, 3.0)]
        omega = np.where(np.arange(600) < 300, 0.9, 0.2)
        y = simulate_mixfix(omega, seed=11)
        fit = ms_two_state_filter(y, comps)
        pred, ll = hamilton_reference(y, comps, fit.transition)
        assert_allclose(fit.predicted, pred, rtol=1e-10)
        assert_allclose(fit.loglik, ll, rtol=1e-12)
        assert_allclose(fit.transition.sum(axis=1), 1.0)

    def test_fit_is_a_maximum(self):
        comps = [GaussianParams(-4.0, 6.0), GaussianParams(1.0, 3.0)]
        y = simulate_mixfix(np.full(400, 0.6), seed=12)
        fit = ms_two_state_filter(y, comps)
        for p11 in (0.2, 0.5, 0.9):
            for p22 in (0.2, 0.5, 0.9):
                P = np.array([[p11, 1 - p11], [1 - p22, p22]])
                assert hamilton_reference(y, comps, P)[1] <= fit.loglik + 1e-8

    def test_needs_two_gaussians(self):
        with pytest.raises(SpecError):
            ms_two_state_filter(np.zeros(10), [GaussianParams(0, 1)])


def test_simulated_corr():
    spec = ModelSpec("mv-gaussian", d=2, J=1)
    state = np.array([0.0, 0.0, 0.0, 0.0, math.acos(0.5)])
    assert abs(simulated_corr(spec, state, 20000, seed=13)[0, 1] - 0.5) < 0.02
