import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import special, stats

from damm.densities import GaussianParams, StudentTParams, TCopulaParams
from damm.errors import SpecError
from damm.model import GasCoefficients, ModelSpec
from damm.simulation import (
    PATTERNS,
    corr_pattern,
    corr_pattern_path,
    dgp_coefficients,
    dgp_spec,
    equicorrelation,
    implied_corr_path,
    mixture_corr,
    sample_component,
    sdmm_stationary_mean,
    simulate_bivariate_corr,
    simulate_damm,
    simulate_dgp4,
    simulate_mixfix,
    simulate_sdmm,
    substream,
    weight_pattern,
    weight_pattern_path,
)


class TestPatterns:
    @pytest.mark.parametrize(
        "name, t, expected",
        [
            ("Constant", 17, 0.9),
            ("Sine", 200, 0.9),
            ("Sine", 100, 0.1),
            ("FastSine", 20, 0.9),
            ("FastSine", 10, 0.1),
            ("Step", 500, 0.9),
            ("Step", 501, 0.4),
            ("Ramp", 100, 0.5),
            ("Ramp", 200, 0.0),
        ],
    )
    def test_corr_golden_values(self, name, t, expected):
        assert_allclose(corr_pattern(name, t, 1000), expected, atol=1e-12)

    @pytest.mark.parametrize("name, t, expected", [("Step", 501, 0.4), ("FastSine", 20, 0.9), ("Ramp", 50, 0.5), ("Ramp", 100, 0.0)])
    def test_weight_golden_values(self, name, t, expected):
        assert_allclose(weight_pattern(name, t, 1000), expected, atol=1e-12)

    @pytest.mark.parametrize("name", PATTERNS)
    def test_paths_are_valid_probabilities(self, name):
        rho = corr_pattern_path(name, 1000, seed=1)
        omega = weight_pattern_path(name, 1000, seed=1)
        assert rho.shape == omega.shape == (1000,)
        assert np.all((rho >= 0) & (rho < 1))
        assert np.all((omega >= 0) & (omega <= 1))

    @pytest.mark.parametrize("name", ["Model1", "Model2"])
    def test_random_patterns_depend_on_seed_only(self, name):
        assert_array_equal(corr_pattern_path(name, 300, seed=4), corr_pattern_path(name, 300, seed=4))
        assert not np.array_equal(corr_pattern_path(name, 300, seed=4), corr_pattern_path(name, 300, seed=5))

    def test_errors(self):
        with pytest.raises(SpecError):
            corr_pattern_path("Square", 10)
        with pytest.raises(SpecError):
            corr_pattern("Sine", 0, 10)


class TestSdmm:
    def test_without_shocks_latents_stay_at_stationary_mean(self):
        path = simulate_sdmm(50, seed=0, shocks=False)
        m = sdmm_stationary_mean()
        assert_allclose(path.omega, special.expit(-0.3))
        assert_allclose(path.mu, np.tile(m[[1, 3]], (50, 1)))
        assert_allclose(path.sigma2, np.exp(np.tile(m[[2, 4]], (50, 1))))

    def test_mixture_moments(self):
        path = simulate_sdmm(500, seed=1)
        w = np.column_stack([path.omega, 1 - path.omega])
        assert_allclose(path.mean, np.sum(w * path.mu, axis=1))
        # total variance is at least the within-component part
        assert np.all(path.variance >= np.sum(w * path.sigma2, axis=1) - 1e-12)

    def test_deterministic(self):
        a, b = simulate_sdmm(100, seed=7), simulate_sdmm(100, seed=7)
        assert_array_equal(a.data, b.data)
        assert_array_equal(a.omega, b.omega)

    def test_component_params(self):
        path = simulate_sdmm(5, seed=2)
        assert path.component_params(3)[1] == GaussianParams(path.mu[3, 1], path.sigma2[3, 1])


class TestSamplers:
    def test_mixfix_frequencies(self):
        omega = np.full(20000, 0.25)
        y = simulate_mixfix(omega, seed=3)
        # mixture mean -4 w + 1 (1 - w) and variance by total variance
        mean = 0.25 * -4 + 0.75 * 1
        var = 0.25 * 6 + 0.75 * 3 + 0.25 * 0.75 * 25
        assert abs(y.mean() - mean) < 4 * math.sqrt(var / y.size)

    def test_bivariate_correlation(self):
        y = simulate_bivariate_corr(np.full(20000, 0.7), seed=4)
        assert abs(np.corrcoef(y.T)[0, 1] - 0.7) < 0.015
        assert_allclose(y.std(axis=0), 1.0, atol=0.02)

    def test_component_draws_match_distribution(self):
        rng = np.random.default_rng(5)
        p = StudentTParams(1.0, 2.0, 5.0)
        draws = np.array([sample_component(p, rng)[0] for _ in range(4000)])
        assert stats.kstest(draws, stats.t(5.0, 1.0, 2.0).cdf).pvalue > 0.001

    def test_tcopula_draws_are_uniform(self):
        rng = np.random.default_rng(6)
        p = TCopulaParams(equicorrelation(3, 0.5), 6.0)
        u = np.array([sample_component(p, rng) for _ in range(3000)])
        for i in range(3):
            assert stats.kstest(u[:, i], "uniform").pvalue > 0.001

    def test_substreams_independent_and_reproducible(self):
        a = substream(42, 0).random(5)
        assert_array_equal(a, substream(42, 0).random(5))
        assert not np.array_equal(a, substream(42, 1).random(5))
        assert not np.array_equal(a, substream(43, 0).random(5))
        assert not np.array_equal(a, substream(42, 0, 1).random(5))
        assert_array_equal(substream(42, 0, 1).random(5), substream(42, 0, 1).random(5))


class TestSimulateDamm:
    def test_component_frequency(self):
        spec = ModelSpec("uni-gaussian", J=2)
        coeffs = GasCoefficients.static([math.log(0.3 / 0.7), -10.0, 0.0, 10.0, 0.0])
        y, trace = simulate_damm(spec, coeffs, 5000, seed=8)
        share = np.mean(y[:, 0] < 0)
        assert abs(share - 0.3) < 3 * math.sqrt(0.3 * 0.7 / 5000)
        assert_allclose(trace.weights[:, 0], 0.3)

    def test_shapes_and_determinism(self):
        spec = ModelSpec("mv-gaussian", d=2, J=2)
        lv = np.array([0.0, 0, 0, 0, 0, 1.2, 0, 0, 0, 0, 2.0])
        coeffs = GasCoefficients.from_levels(spec, lv, 0.02, 0.95)
        y1, tr1 = simulate_damm(spec, coeffs, 40, seed=1)
        y2, tr2 = simulate_damm(spec, coeffs, 40, seed=1)
        assert y1.shape == (40, 2)
        assert tr1.theta_tilde.shape == (40, spec.n_state)
        assert_array_equal(y1, y2)
        assert_array_equal(tr1.theta_tilde, tr2.theta_tilde)

    def test_rejects_bad_length(self):
        spec = ModelSpec("uni-gaussian", J=1)
        with pytest.raises(SpecError):
            simulate_damm(spec, GasCoefficients.static([0.0, 0.0]), 0)


class TestDgp:
    def test_frozen_blocks(self):
        assert dgp_spec("DGP4").frozen_blocks == {"mean", "scale", "weights", "corr"}
        assert dgp_spec("DGP1").frozen_blocks == {"mean", "scale"}
        with pytest.raises(SpecError):
            dgp_spec("DGP9")

    def test_dgp4_truth_is_constant_mixture_correlation(self):
        y, corr, trace = simulate_dgp4("DGP4", 30, seed=2)
        expected = mixture_corr([0.5, 0.5], [equicorrelation(4, 0.2), equicorrelation(4, 0.6)])
        assert y.shape == (30, 4)
        assert_allclose(corr, np.broadcast_to(expected, corr.shape), atol=1e-12)
        assert_allclose(expected[0, 1], 0.4)

    def test_dgp1_truth_is_valid_correlation(self):
        _, corr, _ = simulate_dgp4("DGP1", 200, seed=3)
        assert_allclose(np.diagonal(corr, axis1=1, axis2=2), 1.0, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(corr)[:, 0] > 0)
        assert np.ptp(corr[:, 0, 1]) > 0

    def test_dgp_coefficients_load_only_dynamic_blocks(self):
        spec = dgp_spec("DGP2")
        c = dgp_coefficients("DGP2")
        blocks = spec.coordinate_blocks()
        assert np.all(c.a_diag[blocks == "corr"] == 0.02)
        assert np.all(c.a_diag[blocks != "corr"] == 0)

    def test_implied_corr_with_distinct_means(self):
        # two equal-weight components at +-1 with unit variance: var 2, cov 1 + rho
        spec = ModelSpec("mv-gaussian", d=2, J=2)
        state = np.array([0.0, 1, 1, 0, 0, math.pi / 2, -1, -1, 0, 0, math.pi / 2])
        corr = implied_corr_path(spec, state[None, :])[0]
        assert_allclose(corr[0, 1], 0.5)
