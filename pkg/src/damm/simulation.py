"""Simulators: in-model DAMM paths and the data generating processes of the
Monte Carlo studies (stochastic dynamic mixture, correlation and weight
patterns, four-dimensional correlation DGPs).

Every simulator takes a seed or a :class:`numpy.random.Generator`.
Replication ``r`` of a study draws from ``substream(master_seed, r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .densities import (
    GaussianCopulaParams,
    GaussianParams,
    MvGaussianParams,
    MvStudentTParams,
    StudentTParams,
    TCopulaParams,
)
from .errors import DomainError, SpecError
from .mappings import assemble_full_map, corr_to_angles
from .model import GasCoefficients, ModelSpec
from .score import FilterTrace, gas_step

PATTERNS = ("Constant", "Sine", "FastSine", "Step", "Ramp", "Model1", "Model2")


def substream(master_seed: int, replication: int, *keys: int) -> np.random.Generator:
    """Independent generator for replication ``replication`` of a study.

    Extra ``keys`` (e.g. a scenario index) split the replication further, so
    the data of one scenario do not depend on which others are run.
    """
    entropy = [int(master_seed), int(replication), *map(int, keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Sampling from components
# ---------------------------------------------------------------------------


def sample_component(p, rng: np.random.Generator) -> np.ndarray:
    """One draw from a component (a length-d vector)."""
    if isinstance(p, GaussianParams):
        return np.array([p.mean + math.sqrt(p.variance) * rng.standard_normal()])
    if isinstance(p, StudentTParams):
        return np.array([p.location + p.scale * rng.standard_t(p.shape)])
    if isinstance(p, MvGaussianParams):
        z = np.linalg.cholesky(p.corr) @ rng.standard_normal(p.d)
        return p.mean + p.stdevs * z
    if isinstance(p, MvStudentTParams):
        z = np.linalg.cholesky(p.corr) @ rng.standard_normal(p.d)
        return p.location + p.scales * z / math.sqrt(rng.chisquare(p.shape) / p.shape)
    if isinstance(p, TCopulaParams):
        z = np.linalg.cholesky(p.corr) @ rng.standard_normal(p.d)
        x = z / math.sqrt(rng.chisquare(p.shape) / p.shape)
        return special.stdtr(p.shape, x)
    if isinstance(p, GaussianCopulaParams):
        return special.ndtr(np.linalg.cholesky(p.corr) @ rng.standard_normal(p.d))
    raise DomainError(f"cannot sample {type(p).__name__}")


def simulate_damm(spec: ModelSpec, coeffs: GasCoefficients, T: int, seed=None, init=None):
    """Simulate ``T`` observations from the model.

    At each step a component is drawn from the current weights, the
    observation from that component, and the state is advanced with the drawn
    observation. Returns (data T x d, generating trace).
    """
    coeffs.validate(spec)
    if T < 1:
        raise SpecError("T must be at least 1")
    rng = _rng(seed)
    state = coeffs.stationary_state() if init is None else np.asarray(init, dtype=float).copy()
    L, J = spec.n_state, spec.J
    y = np.empty((T, spec.d))
    states = np.empty((T, L))
    weights = np.empty((T, J))
    xis = np.empty((T, J))
    lls = np.empty(T)
    for t in range(T):
        params, _ = assemble_full_map(spec, state)
        states[t] = state
        weights[t] = params.weights
        j = rng.choice(J, p=params.weights) if J > 1 else 0
        y[t] = sample_component(params.components[j], rng)
        obs = y[t, 0] if spec.d == 1 and not spec.is_copula else y[t]
        state, xis[t], lls[t] = gas_step(spec, coeffs, state, obs)
    return y, FilterTrace(spec, states, weights, xis, lls, state)


# ---------------------------------------------------------------------------
# Stochastic dynamic mixture (SDMM)
# ---------------------------------------------------------------------------

# latent order: omega~, mu_1, sigma~_1^2, mu_2, sigma~_2^2
SDMM_INTERCEPTS = np.array([-0.003, 0.09, -0.001, -0.04, 0.004])
SDMM_SLOPES = np.array([0.99, 0.97, 0.98, 0.98, 0.99])
SDMM_INNOVATION_VARIANCES = np.array([1.00, 0.02, 0.04, 0.06, 0.08])


@dataclass
class SdmmPath:
    data: np.ndarray
    omega: np.ndarray  # weight of component 1
    mu: np.ndarray  # T x 2
    sigma2: np.ndarray  # T x 2
    mean: np.ndarray
    variance: np.ndarray

    def component_params(self, t: int):
        return [GaussianParams(self.mu[t, j], self.sigma2[t, j]) for j in range(2)]


def sdmm_stationary_mean() -> np.ndarray:
    return SDMM_INTERCEPTS / (1.0 - SDMM_SLOPES)


def simulate_sdmm(T: int, seed=None, *, shocks: bool = True, burn_in: int = 0) -> SdmmPath:
    """Two-component Gaussian mixture with AR(1) latent parameters.

    The latent processes start at their stationary means.
    """
    if T < 1:
        raise SpecError("T must be at least 1")
    rng = _rng(seed)
    sd = np.sqrt(SDMM_INNOVATION_VARIANCES)
    x = sdmm_stationary_mean()
    n = T + burn_in
    lat = np.empty((n, 5))
    for t in range(n):
        lat[t] = x
        eps = rng.standard_normal(5) * sd if shocks else np.zeros(5)
        x = SDMM_INTERCEPTS + SDMM_SLOPES * x + eps
    lat = lat[burn_in:]
    omega = special.expit(lat[:, 0])
    mu = lat[:, [1, 3]]
    sigma2 = np.exp(lat[:, [2, 4]])
    first = rng.random(T) < omega
    z = rng.standard_normal(T)
    y = np.where(first, mu[:, 0] + np.sqrt(sigma2[:, 0]) * z, mu[:, 1] + np.sqrt(sigma2[:, 1]) * z)
    w = np.column_stack([omega, 1.0 - omega])
    mean = np.sum(w * mu, axis=1)
    variance = np.sum(w * (sigma2 + mu**2), axis=1) - mean**2
    return SdmmPath(y, omega, mu, sigma2, mean, variance)


# ---------------------------------------------------------------------------
# Correlation and weight patterns
# ---------------------------------------------------------------------------


def _check_pattern(name):
    if name not in PATTERNS:
        raise SpecError(f"unknown pattern {name!r}; expected one of {PATTERNS}")


def _logistic_ar(rng, T, intercept, slope, sd, start):
    out = np.empty(T)
    x = start
    for t in range(T):
        x = intercept + slope * x + sd * rng.standard_normal()
        out[t] = x
    return out


def corr_pattern_path(name: str, T: int, seed=None) -> np.ndarray:
    """Correlation pattern at t = 1..T."""
    _check_pattern(name)
    t = np.arange(1, T + 1, dtype=float)
    if name == "Constant":
        return np.full(T, 0.9)
    if name == "Sine":
        return 0.5 + 0.4 * np.cos(2 * np.pi * t / 200)
    if name == "FastSine":
        return 0.5 + 0.4 * np.cos(2 * np.pi * t / 20)
    if name == "Step":
        return 0.9 - 0.5 * (t > 500)
    if name == "Ramp":
        return np.mod(t, 200) / 200
    rng = _rng(seed)
    if name == "Model1":
        return special.expit(_logistic_ar(rng, T, -0.4 * (1 - 0.99), 0.99, 0.14, -0.4))
    # Model2: mix of two logistic AR correlations with a random weight
    r1 = special.expit(_logistic_ar(rng, T, -0.4 * (1 - 0.99), 0.99, 0.14, -0.4))
    r2 = special.expit(_logistic_ar(rng, T, 0.4 * (1 - 0.99), 0.99, 0.14, 0.4))
    w = 1.0 / (1.0 + np.exp(_logistic_ar(rng, T, 0.0, 0.98, 1.0, 0.0)))
    return w * r1 + (1.0 - w) * r2


def corr_pattern(name: str, t: int, T: int, seed=None) -> float:
    if not 1 <= t <= T:
        raise SpecError("t must lie in 1..T")
    return float(corr_pattern_path(name, T, seed)[t - 1])


def weight_pattern_path(name: str, T: int, seed=None) -> np.ndarray:
    """Mixture-weight pattern at t = 1..T."""
    _check_pattern(name)
    t = np.arange(1, T + 1, dtype=float)
    if name == "Constant":
        return np.full(T, 0.9)
    if name == "Sine":
        return 0.5 + 0.4 * np.cos(2 * np.pi * t / 200)
    if name == "FastSine":
        return 0.5 + 0.4 * np.cos(2 * np.pi * t / 20)
    if name == "Step":
        return 0.9 - 0.5 * (t > 500)
    if name == "Ramp":
        return np.mod(t, 100) / 100
    rng = _rng(seed)
    sd = 0.1 if name == "Model1" else 0.5
    x = _logistic_ar(rng, T, -0.015, 0.98, sd, -0.015 / (1 - 0.98))
    return 1.0 / (1.0 + np.exp(x))


def weight_pattern(name: str, t: int, T: int, seed=None) -> float:
    if not 1 <= t <= T:
        raise SpecError("t must lie in 1..T")
    return float(weight_pattern_path(name, T, seed)[t - 1])


# Two fixed components of the weight study: N(-4, 6) and N(1, 3).
MIXFIX_COMPONENTS = (GaussianParams(-4.0, 6.0), GaussianParams(1.0, 3.0))


def simulate_mixfix(omega, seed=None) -> np.ndarray:
    """y_t ~ omega_t N(-4, 6) + (1 - omega_t) N(1, 3)."""
    rng = _rng(seed)
    omega = np.asarray(omega, dtype=float)
    first = rng.random(omega.size) < omega
    z = rng.standard_normal(omega.size)
    c1, c2 = MIXFIX_COMPONENTS
    return np.where(first, c1.mean + math.sqrt(c1.variance) * z, c2.mean + math.sqrt(c2.variance) * z)


def simulate_bivariate_corr(rho, seed=None) -> np.ndarray:
    """Bivariate standard Gaussian draws with correlation rho_t."""
    rng = _rng(seed)
    rho = np.asarray(rho, dtype=float)
    z = rng.standard_normal((rho.size, 2))
    return np.column_stack([z[:, 0], rho * z[:, 0] + np.sqrt(1.0 - rho**2) * z[:, 1]])


# ---------------------------------------------------------------------------
# Four-dimensional correlation DGPs
# ---------------------------------------------------------------------------

DGP_FROZEN = {
    "DGP1": {"mean", "scale"},
    "DGP2": {"mean", "scale", "weights"},
    "DGP3": {"mean", "scale", "corr"},
    "DGP4": {"mean", "scale", "weights", "corr"},
}


def equicorrelation(d: int, rho: float) -> np.ndarray:
    return np.full((d, d), rho) + (1.0 - rho) * np.eye(d)


def dgp_spec(which: str, d: int = 4) -> ModelSpec:
    if which not in DGP_FROZEN:
        raise SpecError(f"unknown DGP {which!r}; expected one of {sorted(DGP_FROZEN)}")
    return ModelSpec("mv-gaussian", d=d, J=2, frozen_blocks=frozenset(DGP_FROZEN[which]))


def dgp_levels(d: int = 4, omega: float = 0.5, rho1: float = 0.2, rho2: float = 0.6) -> np.ndarray:
    """Unconditional state: weight omega, zero means, unit scales, equicorrelated R_1, R_2."""
    w = math.log(omega) - math.log1p(-omega)
    parts = [[w]]
    for rho in (rho1, rho2):
        parts += [np.zeros(d), np.zeros(d), corr_to_angles(equicorrelation(d, rho))]
    return np.concatenate(parts)


def dgp_coefficients(
    which: str,
    d: int = 4,
    *,
    b: float = 0.98,
    a_weights: float = 0.05,
    a_corr: float = 0.02,
    omega: float = 0.5,
    rho1: float = 0.2,
    rho2: float = 0.6,
) -> GasCoefficients:
    spec = dgp_spec(which, d)
    blocks = spec.coordinate_blocks()
    a = np.where(blocks == "weights", a_weights, a_corr)
    return GasCoefficients.from_levels(spec, dgp_levels(d, omega, rho1, rho2), a, b)


def mixture_corr(weights, corrs) -> np.ndarray:
    """Correlation of a zero-mean, unit-variance mixture: sum_j w_j R_j."""
    return np.einsum("j,jab->ab", np.asarray(weights, float), np.asarray(corrs, float))


def implied_corr_path(spec: ModelSpec, states: np.ndarray) -> np.ndarray:
    """Per-step mixture correlation of a Gaussian-mixture trace (T x d x d)."""
    out = np.empty((states.shape[0], spec.d, spec.d))
    for t, s in enumerate(states):
        params, _ = assemble_full_map(spec, s)
        w = params.weights
        comps = params.components
        mus = np.array([c.mean for c in comps])
        covs = np.array([c.cov for c in comps])
        mean = w @ mus
        dev = mus - mean
        cov = np.einsum("j,jab->ab", w, covs) + np.einsum("j,ja,jb->ab", w, dev, dev)
        sd = np.sqrt(np.diag(cov))
        out[t] = cov / np.outer(sd, sd)
    return out


def simulate_dgp4(which: str, T: int, seed=None, d: int = 4, **overrides):
    """Simulate one of DGP1..DGP4; returns (data T x d, truth correlation T x d x d, trace)."""
    spec = dgp_spec(which, d)
    coeffs = dgp_coefficients(which, d, **overrides)
    y, trace = simulate_damm(spec, coeffs, T, seed)
    return y, implied_corr_path(spec, trace.theta_tilde), trace
