"""Metrics, PIT diagnostics and baseline filters used by the studies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate, optimize, signal, special

from .densities import GaussianParams
from .errors import EstimationError, NumericError, SpecError
from .estimation import (
    EstimationConfig,
    FitResult,
    StaticMixture,
    _initial_partition,
    _m_step,
    clamp_pits,
    conditional_cdf,
    fit_ml,
)
from .model import GasCoefficients, ModelSpec
from .score import filter_pass

log = logging.getLogger(__name__)

AR_LAGS = 20
AR_CRITICAL = 31.41
HIST_BINS = 20
HIST_CRITICAL = 30.14
EWMA_LAMBDA = 0.96
MMR_WINDOW = 100


# ---------------------------------------------------------------------------
# Point metrics
# ---------------------------------------------------------------------------


def _paired(estimate, truth):
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise SpecError(f"shape mismatch: {e.shape} vs {t.shape}")
    return e, t


def mae_mse(estimate, truth) -> tuple[float, float]:
    e, t = _paired(estimate, truth)
    err = e - t
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


def avg_frobenius(estimated, truth) -> float:
    """Time average of the Frobenius norm of R_hat_t - R_t over all entries."""
    e, t = _paired(estimated, truth)
    if e.ndim != 3 or e.shape[1] != e.shape[2]:
        raise SpecError("expected a T x d x d stack of matrices")
    return float(np.mean(np.sqrt(np.sum((e - t) ** 2, axis=(1, 2)))))


@dataclass
class MetricReport:
    name: str
    per_replication: np.ndarray
    relative_to: str | None = None
    failures: int = 0

    def __post_init__(self):
        self.per_replication = np.asarray(self.per_replication, dtype=float)

    @property
    def median(self) -> float:
        ok = self.per_replication[np.isfinite(self.per_replication)]
        return float(np.median(ok)) if ok.size else float("nan")


# ---------------------------------------------------------------------------
# Average Kullback-Leibler divergence
# ---------------------------------------------------------------------------


@dataclass
class GaussianMixturePath:
    """Per-step univariate Gaussian mixture: weights, means, variances (T x J)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if not self.weights.shape == self.means.shape == self.variances.shape:
            raise SpecError("weights, means and variances must share a T x J shape")

    @property
    def T(self) -> int:
        return self.weights.shape[0]

    def logpdf(self, y) -> np.ndarray:
        """log density of y[t] under the step-t mixture."""
        y = np.asarray(y, dtype=float)[:, None]
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights) - 0.5 * (np.log(2 * np.pi * self.variances) + (y - self.means) ** 2 / self.variances)
        return special.logsumexp(lw, axis=1)

    def moments(self):
        mean = np.sum(self.weights * self.means, axis=1)
        var = np.sum(self.weights * (self.variances + self.means**2), axis=1) - mean**2
        return mean, var

    def subset(self, idx) -> "GaussianMixturePath":
        return GaussianMixturePath(self.weights[idx], self.means[idx], self.variances[idx])


def akl(true_density: GaussianMixturePath, model_density: GaussianMixturePath, epsabs: float = 1e-8) -> float:
    """T^-1 sum_t KL(p_t || q_t) by adaptive quadrature on mean +/- 12 sd of p_t."""
    if true_density.T != model_density.T:
        raise SpecError("density paths differ in length")
    mean, var = true_density.moments()
    sd = np.sqrt(var)

    def integrand(z):
        y = mean + z * sd
        lp = true_density.logpdf(y)
        lq = model_density.logpdf(y)
        p = np.exp(lp)
        return np.where(p > 0, p * (lp - lq), 0.0) * sd

    res, err, info = integrate.quad_vec(integrand, -12.0, 12.0, epsabs=epsabs, epsrel=0.0, norm="max", full_output=True)
    if info.status != 0 or not np.all(np.isfinite(res)):
        bad = int(np.argmax(~np.isfinite(res))) if not np.all(np.isfinite(res)) else -1
        raise NumericError(f"AKL quadrature did not converge (status {info.status})", t=bad)
    return float(np.mean(res))


def gaussian_kl(m1, v1, m2, v2) -> float:
    """Closed-form KL(N(m1, v1) || N(m2, v2))."""
    return 0.5 * (math.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


# ---------------------------------------------------------------------------
# PIT diagnostics
# ---------------------------------------------------------------------------


def pit_series(fit: FitResult, data) -> tuple[np.ndarray, int]:
    """PITs of a univariate fit under its own filtered parameters, clamped away from 0 and 1."""
    y = np.asarray(data, dtype=float).reshape(-1)
    trace = fit.filter(y)
    return clamp_pits(conditional_cdf(fit.spec, trace, y))


def dgt_ar_test(pits, k: int = 1, lags: int = AR_LAGS, critical: float = AR_CRITICAL) -> tuple[float, bool]:
    """LM test: (T - lags) R^2 of an AR(lags) regression of the demeaned u^k."""
    if k not in (1, 2, 3, 4):
        raise SpecError("k must be one of 1..4")
    u = np.asarray(pits, dtype=float)
    T = u.size
    if T <= 2 * lags:
        raise SpecError(f"need more than {2 * lags} PITs")
    x = u**k - np.mean(u**k)
    target = x[lags:]
    X = np.column_stack([np.ones(T - lags)] + [x[lags - i : T - i] for i in range(1, lags + 1)])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise NumericError("degenerate regressor matrix in the AR test")
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    sst = float(target @ target)
    r2 = 1.0 - float(resid @ resid) / sst
    stat = max((T - lags) * r2, 0.0)
    return stat, bool(stat > critical)


def dgt_hist_test(pits, bins: int = HIST_BINS, critical: float = HIST_CRITICAL) -> tuple[float, bool]:
    """Pearson chi-square of PIT counts over equal-width bins on (0, 1)."""
    u = np.asarray(pits, dtype=float)
    if u.size < 200:
        raise SpecError("need at least 200 PITs")
    counts, _ = np.histogram(u, bins=bins, range=(0.0, 1.0))
    expected = u.size / bins
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return stat, bool(stat > critical)


# ---------------------------------------------------------------------------
# Log score
# ---------------------------------------------------------------------------


@dataclass
class LogScoreReport:
    total: float
    contributions: np.ndarray
    refits: int
    failed_refits: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.contributions))


def log_score(
    spec: ModelSpec,
    data,
    start: int,
    *,
    window: int,
    refit_every: int = 40,
    config: EstimationConfig | None = None,
    coefficients: GasCoefficients | None = None,
    fit_kwargs: dict | None = None,
) -> LogScoreReport:
    """Sum of one-step-ahead predictive log densities of data[start:].

    Every ``refit_every`` steps the model is refitted on the trailing
    ``window`` observations (fixed window). With ``coefficients`` given, no
    fitting is done. A failed refit keeps the previous coefficients.
    """
    y = np.asarray(data, dtype=float)
    T = y.shape[0]
    if not window <= start < T:
        raise SpecError("need window <= start < T")
    if refit_every < 1:
        raise SpecError("refit_every must be positive")
    config = config or EstimationConfig()
    fit_kwargs = fit_kwargs or {}
    coeffs = coefficients
    fitted_spec = spec
    contrib = []
    failed = []
    refits = 0
    for t0 in range(start, T, refit_every):
        t1 = min(t0 + refit_every, T)
        lo = t0 - window
        if coefficients is None:
            try:
                fit = fit_ml(spec, y[lo:t0], config, **fit_kwargs)
                coeffs, fitted_spec = fit.coefficients, fit.spec
                refits += 1
            except EstimationError as exc:
                if coeffs is None:
                    raise
                failed.append(t0)
                log.warning("refit at %d failed (%s); keeping previous coefficients", t0, exc)
        trace = filter_pass(fitted_spec, coeffs, y[lo:t1])
        contrib.append(trace.loglik_contrib[t0 - lo :])
    contributions = np.concatenate(contrib)
    return LogScoreReport(float(np.sum(contributions)), contributions, refits, failed)


# ---------------------------------------------------------------------------
# EWMA correlation
# ---------------------------------------------------------------------------


def ewma_corr(data, lam: float = EWMA_LAMBDA) -> np.ndarray:
    """Q_t = lam Q_{t-1} + (1 - lam) y_{t-1} y_{t-1}', Q_1 the sample correlation."""
    if not 0 < lam < 1:
        raise SpecError("lambda must lie in (0, 1)")
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != 2:
        raise SpecError("ewma_corr expects T x 2 data")
    q1 = np.corrcoef(y.T)
    if not np.all(np.isfinite(q1)):
        raise NumericError("degenerate sample correlation")
    prods = np.column_stack([y[:, 0] ** 2, y[:, 1] ** 2, y[:, 0] * y[:, 1]])
    # Q_t for t >= 2 is a first-order linear filter of the lagged products.
    inputs = (1.0 - lam) * prods[:-1]
    zi = lam * np.array([q1[0, 0], q1[1, 1], q1[0, 1]])[None, :]
    q_rest, _ = signal.lfilter([1.0], [1.0, -lam], inputs, axis=0, zi=zi)
    q = np.vstack([[q1[0, 0], q1[1, 1], q1[0, 1]], q_rest])
    denom = np.sqrt(q[:, 0] * q[:, 1])
    if np.any(denom <= 0):
        raise NumericError("zero variance in the EWMA recursion")
    return np.clip(q[:, 2] / denom, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Rolling static mixture (MMR)
# ---------------------------------------------------------------------------


@dataclass
class RollingMixture:
    """Window estimates; rows before the first full window are NaN."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    failed: np.ndarray  # True where EM failed and the previous fit was carried forward


def _em_weights_only(y, means, variances, w0, max_iter=500, tol=1e-10):
    lp = -0.5 * (np.log(2 * np.pi * variances)[None, :] + (y[:, None] - means[None, :]) ** 2 / variances[None, :])
    dens = np.exp(lp)
    w = w0.copy()
    prev = -np.inf
    for _ in range(max_iter):
        mix = dens @ w
        ll = float(np.sum(np.log(mix)))
        resp = dens * w[None, :] / mix[:, None]
        w = resp.mean(axis=0)
        if ll - prev < tol * y.size:
            break
        prev = ll
    return w


@njit(cache=True)
def _em_univariate(y, w, m, v, max_iter, tol, scale):
    """Warm-started univariate Gaussian EM. Status 1 flags a collapsed component."""
    T = y.size
    J = w.size
    w = w.copy()
    m = m.copy()
    v = v.copy()
    resp = np.empty((T, J))
    lp = np.empty(J)
    prev = -np.inf
    ll = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        ll = 0.0
        for t in range(T):
            top = -np.inf
            for j in range(J):
                e = y[t] - m[j]
                lp[j] = math.log(w[j]) - 0.5 * (math.log(2.0 * math.pi * v[j]) + e * e / v[j])
                top = max(top, lp[j])
            s = 0.0
            for j in range(J):
                resp[t, j] = math.exp(lp[j] - top)
                s += resp[t, j]
            for j in range(J):
                resp[t, j] /= s
            ll += top + math.log(s)
        if it > 1 and ll - prev < tol * T:
            return w, m, v, ll, it, 0
        prev = ll
        for j in range(J):
            nk = 0.0
            sy = 0.0
            for t in range(T):
                nk += resp[t, j]
                sy += resp[t, j] * y[t]
            if nk < 1.0:
                return w, m, v, ll, it, 1
            mj = sy / nk
            ss = 0.0
            for t in range(T):
                e = y[t] - mj
                ss += resp[t, j] * e * e
            w[j] = nk / T
            m[j] = mj
            v[j] = ss / nk
            if v[j] < 1e-8 * scale:
                return w, m, v, ll, it, 1
    return w, m, v, ll, it, 0


def _em_window(win, J, prev, tol, rng, attempts: int = 6):
    """EM on one window: warm start from ``prev`` (or a principal-axis split),
    then up to five Dirichlet re-jitters after a collapse. None if all collapse."""
    y = win[:, None]
    scale = float(np.var(win)) or 1.0
    for k in range(attempts):
        usable = prev is not None and np.all(prev.weights > 0) and np.all(prev.covs[:, 0, 0] >= 1e-8 * scale)
        if k == 0 and usable:
            w0, m0, v0 = prev.weights, prev.means[:, 0], prev.covs[:, 0, 0]
        else:
            resp = _initial_partition(y, J) if k == 0 else rng.dirichlet(np.ones(J), size=win.size)
            w0, m0, v0 = _m_step(y, resp)
            m0, v0 = m0[:, 0], v0[:, 0, 0]
            if np.any(w0 * win.size < 1.0) or np.any(v0 < 1e-8 * scale):
                continue
        w, m, v, ll, it, status = _em_univariate(win, w0, m0, v0, 1000, tol, scale)
        if status == 0:
            return StaticMixture(w, m[:, None], v[:, None, None], ll, [], it, True, k)
    return None


def _coincident_fit(win, J) -> StaticMixture:
    m = np.full((J, 1), win.mean())
    v = np.full((J, 1, 1), win.var())
    return StaticMixture(np.full(J, 1.0 / J), m, v, float("nan"), [], 0, False, 0)


def mmr_rolling(data, J: int = 2, K: int = MMR_WINDOW, *, fixed_components=None, tol: float = 1e-8, seed: int = 0) -> RollingMixture:
    """Static Gaussian mixture refitted by EM on each trailing window of K points.

    Row t (0-based) uses y[t-K+1 .. t]; rows t < K-1 are unavailable.
    ``fixed_components`` (means, variances) restricts EM to the weights.
    Each window warm-starts from the previous fit. A window where every EM
    attempt collapses is flagged in ``failed`` and carries the previous fit
    forward (equal, coincident components if there is none yet).
    """
    y = np.asarray(data, dtype=float).reshape(-1)
    T = y.size
    if K > T:
        raise SpecError("window K exceeds the sample length")
    W = np.full((T, J), np.nan)
    M = np.full((T, J), np.nan)
    V = np.full((T, J), np.nan)
    failed = np.zeros(T, dtype=bool)
    rng = np.random.default_rng(seed)
    prev = None
    for t in range(K - 1, T):
        win = y[t - K + 1 : t + 1]
        if fixed_components is not None:
            means, variances = (np.asarray(a, dtype=float) for a in fixed_components)
            w0 = np.full(J, 1.0 / J) if prev is None else prev
            prev = _em_weights_only(win, means, variances, w0)
            W[t], M[t], V[t] = prev, means, variances
            continue
        fit = _em_window(win, J, prev, tol, rng)
        if fit is None:
            failed[t] = True
            # with no earlier fit, use the fixed point where all components coincide
            fit = prev if prev is not None else _coincident_fit(win, J)
        prev = fit
        W[t], M[t], V[t] = prev.weights, prev.means[:, 0], prev.covs[:, 0, 0]
    return RollingMixture(W, M, V, failed)


# ---------------------------------------------------------------------------
# Two-state Markov switching with fixed Gaussian regimes
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hamilton(ld, p11, p22, pred):
    T = ld.shape[0]
    # start from the stationary distribution of the chain
    denom = 2.0 - p11 - p22
    pi1 = (1.0 - p22) / denom if denom > 0 else 0.5
    total = 0.0
    for t in range(T):
        pred[t] = pi1
        m = max(ld[t, 0], ld[t, 1])
        a = pi1 * math.exp(ld[t, 0] - m)
        b = (1.0 - pi1) * math.exp(ld[t, 1] - m)
        lik = a + b
        total += m + math.log(lik)
        f1 = a / lik
        pi1 = f1 * p11 + (1.0 - f1) * (1.0 - p22)
    return total


@dataclass
class MarkovSwitchingFit:
    predicted: np.ndarray  # P(S_t = 1 | F_{t-1})
    transition: np.ndarray
    loglik: float


def ms_two_state_filter(data, components) -> MarkovSwitchingFit:
    """Fit the transition matrix by ML through the Hamilton filter."""
    y = np.asarray(data, dtype=float).reshape(-1)
    comps = list(components)
    if len(comps) != 2 or not all(isinstance(c, GaussianParams) for c in comps):
        raise SpecError("two GaussianParams components are required")
    ld = np.column_stack([-0.5 * (np.log(2 * np.pi * c.variance) + (y - c.mean) ** 2 / c.variance) for c in comps])
    pred = np.empty(y.size)

    def negll(x):
        p11, p22 = special.expit(x)
        return -_hamilton(ld, p11, p22, pred) / y.size

    best = None
    for x0 in ([2.0, 2.0], [0.0, 0.0], [4.0, 4.0]):
        res = optimize.minimize(negll, np.array(x0), method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise EstimationError("Markov switching likelihood is not finite")
    p11, p22 = special.expit(best.x)
    ll = _hamilton(ld, p11, p22, pred)
    P = np.array([[p11, 1.0 - p11], [1.0 - p22, p22]])
    return MarkovSwitchingFit(pred.copy(), P, float(ll))


# ---------------------------------------------------------------------------
# Simulated implied correlation (copula mixtures)
# ---------------------------------------------------------------------------


def simulated_corr(spec: ModelSpec, theta_tilde, n_draws: int = 10_000, seed=None) -> np.ndarray:
    """Pearson correlation of draws from the mixture at one state.

    For copula families the draws are on the uniform scale.
    """
    from .mappings import assemble_full_map
    from .simulation import _rng, sample_component

    rng = _rng(seed)
    params, _ = assemble_full_map(spec, np.asarray(theta_tilde, dtype=float))
    labels = rng.choice(spec.J, size=n_draws, p=params.weights)
    draws = np.array([sample_component(params.components[j], rng) for j in labels])
    return np.corrcoef(draws.T)
