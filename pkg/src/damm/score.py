"""Conditional scores of mixture components and the score-driven recursion.

The component scores are derived from the log-densities in
:mod:`damm.densities` and are checked against finite differences in the test
suite. The recursion is

    theta~_{t+1} = kappa + a * s_t + b * theta~_t,

where ``s_t`` stacks the weights score ``J_w' (p_j / p)`` and, for every
component, ``xi_j J_j' grad log p_j`` with ``xi_j = w_j p_j / p``.

Two engines evaluate the filter: ``"python"`` (this module, step by step with
the density objects) and ``"compiled"`` (:mod:`damm._kernels`). Both produce
identical traces up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._numerics import digamma_scalar
from .densities import (
    ComponentParams,
    GaussianCopulaParams,
    GaussianParams,
    MvGaussianParams,
    MvStudentTParams,
    StudentTParams,
    TCopulaParams,
    component_logpdf,
    student_t_quantile,
)
from .errors import DomainError, NumericError, SpecError, UnsupportedOperation
from .mappings import (
    MixtureParams,
    assemble_full_map,
    component_from_unconstrained,
    component_jacobian,
    corr_pairs,
    simplex_jacobian,
    simplex_map,
)
from .model import GasCoefficients, ModelSpec

# ---------------------------------------------------------------------------
# Component scores (constrained parametrization)
# ---------------------------------------------------------------------------


def _corr_score(g: np.ndarray, rinv: np.ndarray, w: float) -> np.ndarray:
    d = rinv.shape[0]
    return np.array([w * g[i] * g[l] - rinv[i, l] for i, l in corr_pairs(d)])


def _mv_score(y, loc, scales, corr, shape=None):
    d = loc.size
    v = (y - loc) / scales
    rinv = np.linalg.inv(corr)
    g = rinv @ v
    r = float(v @ g)
    w = 1.0 if shape is None else (shape + d) / (shape + r)
    s_mu = w * g / scales
    s_scale = (w * v * g - 1.0) / scales
    s_rho = _corr_score(g, rinv, w)
    parts = [s_mu, s_scale, s_rho]
    if shape is not None:
        s_shape = (
            0.5 * digamma_scalar(0.5 * (shape + d))
            - 0.5 * digamma_scalar(0.5 * shape)
            - 0.5 * d / shape
            - 0.5 * math.log1p(r / shape)
            + 0.5 * (shape + d) * r / (shape * (shape + r))
        )
        parts.append([s_shape])
    return np.concatenate(parts)


def component_score(y, p: ComponentParams) -> np.ndarray:
    """Gradient of log p_j(y) with respect to the constrained parameters.

    Layout follows :func:`damm.mappings.component_vector`, except for the
    t-copula where only the correlation block is returned (its shape has no
    closed-form score and is held fixed).
    """
    if isinstance(p, GaussianParams):
        e = float(y) - p.mean
        s2 = p.variance
        return np.array([e / s2, 0.5 * (e * e / s2 - 1.0) / s2])
    if isinstance(p, StudentTParams):
        e = float(y) - p.location
        psi, nu = p.scale, p.shape
        denom = nu * psi * psi + e * e
        return np.array(
            [
                (nu + 1.0) * e / denom,
                -1.0 / psi + (nu + 1.0) * e * e / (psi * denom),
                0.5 * digamma_scalar(0.5 * (nu + 1.0))
                - 0.5 * digamma_scalar(0.5 * nu)
                - 0.5 / nu
                - 0.5 * math.log1p(e * e / (nu * psi * psi))
                + 0.5 * (nu + 1.0) * e * e / (nu * denom),
            ]
        )
    y = np.asarray(y, dtype=float)
    if isinstance(p, MvGaussianParams):
        return _mv_score(y, p.mean, p.stdevs, p.corr)
    if isinstance(p, MvStudentTParams):
        return _mv_score(y, p.location, p.scales, p.corr, p.shape)
    if isinstance(p, TCopulaParams):
        x = student_t_quantile(y, p.shape)
        rinv = np.linalg.inv(p.corr)
        g = rinv @ x
        return _corr_score(g, rinv, (p.shape + p.d) / (p.shape + float(x @ g)))
    if isinstance(p, GaussianCopulaParams):
        x = special.ndtri(y)
        rinv = np.linalg.inv(p.corr)
        return _corr_score(rinv @ x, rinv, 1.0)
    raise DomainError(f"unknown component parameter type {type(p).__name__}")


# ---------------------------------------------------------------------------
# Mixture scores
# ---------------------------------------------------------------------------


def _log_ratios(y, weights, components):
    lp = np.array([component_logpdf(y, c) for c in components], dtype=float)
    with np.errstate(divide="ignore"):
        lmix = special.logsumexp(lp + np.log(np.asarray(weights, dtype=float)))
    if not np.isfinite(lmix):
        raise NumericError("mixture density underflows to zero", block="weights")
    return lp - lmix, lmix


def weight_score(y, weights, components) -> np.ndarray:
    """Score of the mixture with respect to the weights: p_j(y) / p(y)."""
    log_ratio, _ = _log_ratios(y, weights, components)
    return np.exp(log_ratio)


def xi_weights(y, weights, components) -> np.ndarray:
    """Relative contribution w_j p_j(y) / p(y) of each component."""
    return np.asarray(weights, dtype=float) * weight_score(y, weights, components)


def mixture_component_score(y, weights, components, j: int) -> np.ndarray:
    """Score of the mixture log-density with respect to component j's parameters."""
    xi = xi_weights(y, weights, components)
    if xi[j] == 0.0:
        return np.zeros_like(component_score(y, components[j]))
    return xi[j] * component_score(y, components[j])


def transformed_component_score(spec: ModelSpec, y, theta_j, p: ComponentParams | None = None):
    """J_j' grad log p_j: score of a component in its unconstrained coordinates."""
    if p is None:
        p = component_from_unconstrained(spec, theta_j)
    grad = component_score(y, p)
    if spec.family == "t-copula":
        grad = np.append(grad, 0.0)
    return component_jacobian(spec, theta_j).T @ grad


def full_scaled_score(spec: ModelSpec, theta_tilde, y):
    """Score of the mixture with respect to the whole unconstrained state.

    Returns (score, xi, loglik contribution).
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    params, _ = assemble_full_map(spec, theta_tilde)
    log_ratio, lmix = _log_ratios(y, params.weights, params.components)
    ratio = np.exp(log_ratio)
    xi = params.weights * ratio
    score = np.zeros(spec.n_state)
    if spec.J > 1:
        score[: spec.n_weights] = simplex_jacobian(theta_tilde[: spec.n_weights]).T @ ratio
    for j in range(spec.J):
        sl = spec.component_slice(j)
        if xi[j] > 0.0:
            score[sl] = xi[j] * transformed_component_score(spec, y, theta_tilde[sl], params.components[j])
    return score, xi, float(lmix)


def gas_step(spec: ModelSpec, coeffs: GasCoefficients, theta_tilde_t, y_t):
    """One update of the recursion; returns (theta_tilde_next, xi, loglik contribution)."""
    theta_tilde_t = np.asarray(theta_tilde_t, dtype=float)
    score, xi, ll = full_scaled_score(spec, theta_tilde_t, y_t)
    if not np.all(np.isfinite(score)):
        bad = spec.coordinate_blocks()[~np.isfinite(score)][0]
        raise NumericError(f"non-finite score in block {bad!r}", block=bad)
    nxt = coeffs.kappa + coeffs.a_diag * score + coeffs.b_diag * theta_tilde_t
    return nxt, xi, ll


# ---------------------------------------------------------------------------
# Filter pass
# ---------------------------------------------------------------------------


@dataclass
class FilterTrace:
    """Per-time-step output of a filter pass.

    ``theta_tilde[t]`` is the state used to evaluate observation ``t`` (known
    at ``t - 1``); ``next_state`` is the one-step-ahead state after the last
    observation.
    """

    spec: ModelSpec
    theta_tilde: np.ndarray
    weights: np.ndarray
    xi: np.ndarray
    loglik_contrib: np.ndarray
    next_state: np.ndarray

    @property
    def T(self) -> int:
        return self.loglik_contrib.size

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_contrib))

    def params_at(self, t: int) -> MixtureParams:
        return assemble_full_map(self.spec, self.theta_tilde[t])[0]

    def component_params(self, t: int) -> tuple:
        return self.params_at(t).components


def _check_data(spec: ModelSpec, data) -> np.ndarray:
    y = np.asarray(data, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] != spec.d:
        raise SpecError(f"data must be T x {spec.d}, got shape {np.shape(data)}")
    if y.shape[0] < 1:
        raise SpecError("data must have at least one row")
    if spec.is_copula and (np.any(y <= 0) or np.any(y >= 1)):
        raise DomainError("copula data must lie strictly inside (0, 1)")
    return y


def _filter_python(spec, coeffs, y, init):
    T, L = y.shape[0], spec.n_state
    states = np.empty((T, L))
    xis = np.empty((T, spec.J))
    lls = np.empty(T)
    state = init.copy()
    for t in range(T):
        states[t] = state
        obs = y[t, 0] if spec.family in ("uni-gaussian", "uni-student-t") else y[t]
        try:
            state, xis[t], lls[t] = gas_step(spec, coeffs, state, obs)
        except NumericError as exc:
            exc.t = t
            raise NumericError(f"{exc} at t={t}", block=exc.block, t=t) from exc
    return states, xis, lls, state


def filter_pass(spec: ModelSpec, coeffs: GasCoefficients, data, init=None, engine: str = "compiled") -> FilterTrace:
    """Run the recursion over ``data`` and record the trace.

    ``init`` defaults to the stationary level ``kappa / (1 - b)``.
    """
    coeffs.validate(spec)
    y = _check_data(spec, data)
    init = coeffs.stationary_state() if init is None else np.asarray(init, dtype=float)
    if isinstance(init, np.ndarray) and init.shape != (spec.n_state,):
        raise SpecError("init state has the wrong length")
    if engine == "python":
        states, xis, lls, last = _filter_python(spec, coeffs, y, init)
    elif engine == "compiled":
        from ._kernels import run_filter

        states, xis, lls, last = run_filter(spec, coeffs, y, init, store=True)
    else:
        raise SpecError(f"unknown engine {engine!r}")
    if spec.J > 1:
        weights = np.array([simplex_map(s[: spec.n_weights]) for s in states])
    else:
        weights = np.ones((y.shape[0], 1))
    return FilterTrace(spec, states, weights, xis, lls, last)


def loglik(spec: ModelSpec, coeffs: GasCoefficients, data, init=None) -> float:
    """Total log-likelihood via the compiled engine (no trace stored)."""
    from ._kernels import run_filter

    y = _check_data(spec, data)
    init = coeffs.stationary_state() if init is None else np.asarray(init, dtype=float)
    return float(run_filter(spec, coeffs, y, init, store=False))


# ---------------------------------------------------------------------------
# Implied moments
# ---------------------------------------------------------------------------


def component_moments(p: ComponentParams) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, GaussianParams):
        return np.array([p.mean]), np.array([[p.variance]])
    if isinstance(p, StudentTParams):
        if p.shape <= 2:
            raise DomainError("Student-t variance requires shape > 2")
        return np.array([p.location]), np.array([[p.scale**2 * p.shape / (p.shape - 2.0)]])
    if isinstance(p, MvGaussianParams):
        return p.mean.copy(), p.cov
    if isinstance(p, MvStudentTParams):
        if p.shape <= 2:
            raise DomainError("Student-t covariance requires shape > 2")
        return p.location.copy(), p.scale_matrix * p.shape / (p.shape - 2.0)
    raise UnsupportedOperation("copula components have no closed-form moments")


def mixture_moments(weights, components) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a finite mixture (law of total variance)."""
    mus, covs = zip(*(component_moments(c) for c in components))
    mus = np.array(mus)
    covs = np.array(covs)
    w = np.asarray(weights, dtype=float)
    mean = w @ mus
    dev = mus - mean
    cov = np.einsum("j,jab->ab", w, covs) + np.einsum("j,ja,jb->ab", w, dev, dev)
    return mean, cov


def implied_moments(spec: ModelSpec, trace: FilterTrace) -> tuple[np.ndarray, np.ndarray]:
    """Per-step conditional mean (T x d) and covariance (T x d x d)."""
    if spec.is_copula:
        raise UnsupportedOperation("copula mixtures need simulated moments; see damm.evaluation")
    T, d = trace.T, spec.d
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    for t in range(T):
        p = trace.params_at(t)
        means[t], covs[t] = mixture_moments(p.weights, p.components)
    return means, covs
