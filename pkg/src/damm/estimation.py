"""Maximum-likelihood estimation of the recursion coefficients.

The optimizer works on a vector of free coefficients. Every coordinate of
the unconstrained state is one of

* dynamic: (kappa, a, b) are free, b through a bounded logistic on (-s, s),
* static: only kappa is free (a = b = 0, the block is frozen),
* fixed: nothing is free, kappa is supplied by the caller.

Starting values come from a static Gaussian mixture fitted by EM.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy.linalg import solve_triangular

from ._kernels import run_filter
from .densities import GaussianParams, MvGaussianParams, StudentTParams
from .errors import DomainError, EstimationError, NumericError, SpecError, UnsupportedOperation
from .mappings import (
    component_to_unconstrained,
    corr_to_angles,
    simplex_inverse,
)
from .model import GasCoefficients, ModelSpec, n_corr
from .score import FilterTrace, _check_data, filter_pass

log = logging.getLogger(__name__)

PIT_CLAMP = 1e-10
DEFAULT_T_SHAPE = 8.0
_PENALTY = 1e10


# max projected gradient of -loglik/T at which a fit counts as converged
GRADIENT_ACCEPT = 1e-3


@dataclass
class EstimationConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    restarts: int = 3
    seed: int = 0
    stationarity_bound: float = 0.999
    fd_step: float = 1e-6
    standard_errors: bool = False
    parametrization: str = "level"
    nonnegative_a: bool = True

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise SpecError("gradient_tolerance must be positive")
        if self.restarts < 1:
            raise SpecError("restarts must be at least 1")
        if not 0 < self.stationarity_bound < 1:
            raise SpecError("stationarity_bound must lie in (0, 1)")
        if self.max_iterations < 1:
            raise SpecError("max_iterations must be at least 1")
        if self.parametrization not in ("level", "intercept"):
            raise SpecError("parametrization must be 'level' or 'intercept'")


# ---------------------------------------------------------------------------
# Static mixture by EM
# ---------------------------------------------------------------------------


@dataclass
class StaticMixture:
    """Static Gaussian mixture: weights (J,), means (J, d), covariances (J, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float = float("nan")
    loglik_path: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    collapses: int = 0

    @property
    def J(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def components(self):
        if self.d == 1:
            return [GaussianParams(float(m[0]), float(c[0, 0])) for m, c in zip(self.means, self.covs)]
        out = []
        for m, c in zip(self.means, self.covs):
            sd = np.sqrt(np.diag(c))
            corr = c / np.outer(sd, sd)
            corr = 0.5 * (corr + corr.T)
            np.fill_diagonal(corr, 1.0)
            out.append(MvGaussianParams(m, sd, corr))
        return out

    def loglik_of(self, data) -> float:
        y = np.asarray(data, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        return float(np.sum(_mixture_terms(y, self.weights, self.means, self.covs)[1]))

    def to_state(self, spec: ModelSpec, shape: float = DEFAULT_T_SHAPE) -> np.ndarray:
        """Unconstrained state of ``spec`` whose components match this fit."""
        if spec.J != self.J:
            raise SpecError("component count mismatch")
        parts = [simplex_inverse(self.weights)] if self.J > 1 else []
        for p in self.components():
            if spec.family == "uni-gaussian":
                parts.append(component_to_unconstrained(spec, p))
            elif spec.family == "uni-student-t":
                scale = math.sqrt(p.variance * (shape - 2.0) / shape)
                parts.append(component_to_unconstrained(spec, StudentTParams(p.mean, scale, shape)))
            elif spec.family == "mv-gaussian":
                parts.append(component_to_unconstrained(spec, p))
            elif spec.family == "mv-student-t":
                scales = p.stdevs * math.sqrt((shape - 2.0) / shape)
                parts.append(
                    np.concatenate(
                        [p.mean, np.log(scales), corr_to_angles(p.corr), [math.log(shape - spec.shape_offset)]]
                    )
                )
            else:
                parts.append(_copula_block(spec, p.corr, shape))
        return np.concatenate(parts)


def _copula_block(spec: ModelSpec, corr, shape):
    ang = corr_to_angles(corr)
    if spec.family == "t-copula":
        return np.concatenate([ang, [math.log(shape - spec.shape_offset)]])
    return ang


def _component_logpdfs(y, means, covs):
    """T x J matrix of Gaussian log-densities."""
    T, d = y.shape
    out = np.empty((T, means.shape[0]))
    for j in range(means.shape[0]):
        if d == 1:
            var = covs[j, 0, 0]
            e = y[:, 0] - means[j, 0]
            out[:, j] = -0.5 * (math.log(2 * math.pi * var) + e * e / var)
        else:
            chol = np.linalg.cholesky(covs[j])
            z = solve_triangular(chol, (y - means[j]).T, lower=True)
            out[:, j] = (
                -0.5 * d * math.log(2 * math.pi)
                - np.sum(np.log(np.diag(chol)))
                - 0.5 * np.sum(z * z, axis=0)
            )
    return out


def _mixture_terms(y, weights, means, covs):
    """(log responsibilities T x J, per-observation mixture loglik)."""
    with np.errstate(divide="ignore"):
        lw = _component_logpdfs(y, means, covs) + np.log(weights)
    lmix = special.logsumexp(lw, axis=1)
    return lw - lmix[:, None], lmix


def static_mixture_loglik(data, weights, components) -> float:
    """Static mixture log-likelihood from component parameter objects."""
    y = np.asarray(data, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    means, covs = [], []
    for c in components:
        if isinstance(c, GaussianParams):
            means.append([c.mean])
            covs.append([[c.variance]])
        elif isinstance(c, MvGaussianParams):
            means.append(c.mean)
            covs.append(c.cov)
        else:
            raise UnsupportedOperation("static EM log-likelihood covers Gaussian components only")
    return float(np.sum(_mixture_terms(y, np.asarray(weights, float), np.array(means), np.array(covs))[1]))


def _initial_partition(y, J):
    # Split along the leading principal direction into J equal-count groups.
    T, d = y.shape
    if d == 1:
        proj = y[:, 0]
    else:
        centred = y - y.mean(axis=0)
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        proj = centred @ vt[0]
    order = np.argsort(proj, kind="stable")
    resp = np.zeros((T, J))
    for j, idx in enumerate(np.array_split(order, J)):
        resp[idx, j] = 1.0
    return resp


def _m_step(y, resp):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ y) / nk[:, None]
    J, d = means.shape
    covs = np.empty((J, d, d))
    for j in range(J):
        e = y - means[j]
        covs[j] = (resp[:, j, None] * e).T @ e / nk[j]
        covs[j] = 0.5 * (covs[j] + covs[j].T)
    return weights, means, covs


def _collapsed(weights, covs, T, scale):
    if np.any(weights * T < 1.0):
        return True
    for c in covs:
        if np.linalg.eigvalsh(c)[0] < 1e-8 * scale:
            return True
    return False


def em_static_mixture(
    data,
    J: int,
    family: str = "uni-gaussian",
    *,
    max_iter: int = 1000,
    tol: float = 1e-10,
    seed: int = 0,
    init: StaticMixture | None = None,
    check_size: bool = True,
) -> StaticMixture:
    """Fit a static J-component Gaussian mixture by EM.

    Student-t families reuse the Gaussian fit (see :meth:`StaticMixture.to_state`).
    ``tol`` bounds the per-observation log-likelihood increase at convergence.
    """
    y = np.asarray(data, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    T, d = y.shape
    if family in ("uni-gaussian", "uni-student-t") and d != 1:
        raise SpecError(f"{family} expects univariate data")
    if family not in ("uni-gaussian", "uni-student-t", "mv-gaussian", "mv-student-t"):
        raise SpecError(f"EM initialization is not defined for {family}")
    if J < 1:
        raise SpecError("J must be at least 1")
    if check_size and T < 10 * J:
        raise SpecError(f"EM needs at least 10*J = {10 * J} observations, got {T}")
    if J == 1:
        mean = y.mean(axis=0)
        e = y - mean
        cov = (e.T @ e / T)[None]
        fit = StaticMixture(np.ones(1), mean[None], cov, n_iter=0, converged=True)
        fit.loglik = fit.loglik_of(y)
        fit.loglik_path = [fit.loglik]
        return fit

    rng = np.random.default_rng(seed)
    scale = float(np.mean(np.var(y, axis=0))) or 1.0
    collapses = 0
    if init is not None:
        params = (init.weights.copy(), init.means.copy(), init.covs.copy())
    else:
        params = _m_step(y, _initial_partition(y, J))
    while True:
        if _collapsed(params[0], params[2], T, scale):
            collapses += 1
            if collapses > 5:
                raise EstimationError("EM components collapsed five times", {"collapses": collapses})
            params = _m_step(y, rng.dirichlet(np.ones(J), size=T))
            continue
        path = []
        converged = False
        collapsed = False
        for it in range(max_iter):
            log_resp, lmix = _mixture_terms(y, *params)
            ll = float(lmix.sum())
            path.append(ll)
            if it > 0 and ll - path[-2] < tol * T:
                converged = True
                break
            params = _m_step(y, np.exp(log_resp))
            if _collapsed(params[0], params[2], T, scale):
                collapsed = True
                break
        if collapsed:
            continue
        w, m, c = params
        return StaticMixture(w, m, c, ll, path, len(path), converged, collapses)


# ---------------------------------------------------------------------------
# Coefficient transform and free-parameter layout
# ---------------------------------------------------------------------------


def _b_forward(b, s):
    return np.log(b + s) - np.log(s - b)


def _b_inverse(x, s):
    x = np.asarray(x, dtype=float)
    # evaluate from the nearer bound so the result stays strictly inside (-s, s)
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = s - 2.0 * s * special.expit(-x[pos])
    out[~pos] = -s + 2.0 * s * special.expit(x[~pos])
    inner = np.nextafter(s, 0.0)
    return np.clip(out, -inner, inner)


def coefficient_transform(coeffs, direction: str = "forward", bound: float = 0.999):
    """Map coefficients to the optimizer space ``[kappa, a, b~]`` and back.

    ``b~`` is the bounded-logistic pre-image of b on (-bound, bound); kappa
    and a pass through unchanged.
    """
    if direction == "forward":
        b = np.asarray(coeffs.b_diag, dtype=float)
        if np.any(np.abs(b) >= bound):
            raise DomainError(f"b_diag must lie inside (-{bound}, {bound})")
        return np.concatenate([coeffs.kappa, coeffs.a_diag, _b_forward(b, bound)])
    if direction == "inverse":
        x = np.asarray(coeffs, dtype=float)
        if x.size % 3:
            raise SpecError("transformed vector length must be a multiple of 3")
        L = x.size // 3
        return GasCoefficients(x[:L], x[L : 2 * L], _b_inverse(x[2 * L :], bound))
    raise SpecError(f"unknown direction {direction!r}")


class ParameterLayout:
    """Free coefficients of a spec given a set of fixed blocks."""

    def __init__(self, spec: ModelSpec, fixed_blocks=(), fixed_state=None, bound: float = 0.999, levels: bool = True):
        self.spec = spec
        self.bound = bound
        self.levels = levels
        blocks = spec.coordinate_blocks()
        self.fixed = np.array([b in fixed_blocks for b in blocks], dtype=bool)
        self.dynamic = spec.dynamic_mask() & ~self.fixed
        self.static = ~spec.dynamic_mask() & ~self.fixed
        L = spec.n_state
        if self.fixed.any():
            if fixed_state is None:
                raise SpecError("fixed blocks need fixed_state values")
            fixed_state = np.asarray(fixed_state, dtype=float)
            if fixed_state.shape != (L,):
                raise SpecError("fixed_state has the wrong length")
        self.fixed_state = np.zeros(L) if fixed_state is None else fixed_state
        self.kappa_idx = np.flatnonzero(self.dynamic | self.static)
        self.dyn_idx = np.flatnonzero(self.dynamic)
        labels = spec.coordinate_labels()
        name = {k: ("level" if levels and self.dynamic[k] else "kappa") for k in self.kappa_idx}
        self.labels = (
            [f"{name[k]}[{labels[k]}]" for k in self.kappa_idx]
            + [f"a[{labels[k]}]" for k in self.dyn_idx]
            + [f"b[{labels[k]}]" for k in self.dyn_idx]
        )

    @property
    def n_free(self) -> int:
        return self.kappa_idx.size + 2 * self.dyn_idx.size

    def to_coeffs(self, x) -> GasCoefficients:
        L = self.spec.n_state
        nk, nd = self.kappa_idx.size, self.dyn_idx.size
        kappa = self.fixed_state.copy()
        kappa[~self.fixed] = 0.0
        kappa[self.kappa_idx] = x[:nk]
        a = np.zeros(L)
        b = np.zeros(L)
        a[self.dyn_idx] = x[nk : nk + nd]
        b[self.dyn_idx] = _b_inverse(x[nk + nd :], self.bound)
        if self.levels:
            kappa[self.dyn_idx] *= 1.0 - b[self.dyn_idx]
        return GasCoefficients(kappa, a, b)

    def to_vector(self, coeffs: GasCoefficients) -> np.ndarray:
        b = coeffs.b_diag[self.dyn_idx]
        if np.any(np.abs(b) >= self.bound):
            raise DomainError("starting b_diag outside the stationarity bound")
        kappa = coeffs.stationary_state() if self.levels else coeffs.kappa
        return np.concatenate([kappa[self.kappa_idx], coeffs.a_diag[self.dyn_idx], _b_forward(b, self.bound)])

    def bounds(self, nonnegative_a: bool = True) -> list:
        """Box bounds for the optimizer: a >= 0 when requested, else free."""
        nk, nd = self.kappa_idx.size, self.dyn_idx.size
        lo_a = 0.0 if nonnegative_a else None
        return [(None, None)] * nk + [(lo_a, None)] * nd + [(None, None)] * nd

    def natural(self, x) -> np.ndarray:
        """Free coefficients in natural units (b instead of its pre-image)."""
        nk, nd = self.kappa_idx.size, self.dyn_idx.size
        return np.concatenate([x[: nk + nd], _b_inverse(x[nk + nd :], self.bound)])

    def natural_jacobian_diag(self, x) -> np.ndarray:
        nk, nd = self.kappa_idx.size, self.dyn_idx.size
        s = self.bound
        sig = special.expit(x[nk + nd :])
        return np.concatenate([np.ones(nk + nd), 2.0 * s * sig * (1.0 - sig)])


def count_free_parameters(spec: ModelSpec, fixed_blocks=()) -> int:
    """3 per dynamic coordinate, 1 per static coordinate, 0 per fixed coordinate."""
    blocks = spec.coordinate_blocks()
    dyn = spec.dynamic_mask()
    fixed = np.array([b in fixed_blocks for b in blocks], dtype=bool)
    return int(3 * np.sum(dyn & ~fixed) + np.sum(~dyn & ~fixed))


# ---------------------------------------------------------------------------
# ML fit
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    spec: ModelSpec
    coefficients: GasCoefficients
    loglik: float
    n_params: int
    n_obs: int
    converged: bool
    free_labels: list
    free_values: np.ndarray
    standard_errors: np.ndarray | None = None
    fixed_blocks: tuple = ()
    starts: list = field(default_factory=list)

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.loglik

    @property
    def bic(self) -> float:
        return math.log(self.n_obs) * self.n_params - 2.0 * self.loglik

    def filter(self, data, engine: str = "compiled") -> FilterTrace:
        return filter_pass(self.spec, self.coefficients, data, engine=engine)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "coefficients": self.coefficients.to_dict(),
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "fixed_blocks": list(self.fixed_blocks),
            "free_parameters": dict(zip(self.free_labels, [float(v) for v in self.free_values])),
            "standard_errors": None
            if self.standard_errors is None
            else dict(zip(self.free_labels, [float(v) for v in self.standard_errors])),
            "starts": self.starts,
        }


class _Objective:
    """Negative average log-likelihood over the free-parameter vector."""

    def __init__(self, layout: ParameterLayout, y: np.ndarray):
        self.layout = layout
        self.y = y
        self.T = y.shape[0]

    def loglik(self, x) -> float:
        coeffs = self.layout.to_coeffs(x)
        try:
            ll = run_filter(self.layout.spec, coeffs, self.y, coeffs.stationary_state(), store=False)
        except (NumericError, DomainError):
            return -np.inf
        return ll if np.isfinite(ll) else -np.inf

    def __call__(self, x) -> float:
        ll = self.loglik(x)
        return -ll / self.T if np.isfinite(ll) else _PENALTY

    def grad(self, x, h) -> np.ndarray:
        g = np.empty(x.size)
        for k in range(x.size):
            e = np.zeros(x.size)
            e[k] = h
            g[k] = (self(x + e) - self(x - e)) / (2.0 * h)
        return g

    def hessian(self, x, h=1e-4) -> np.ndarray:
        n = x.size
        H = np.empty((n, n))
        f0 = self(x)
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h
            H[i, i] = (self(x + ei) - 2 * f0 + self(x - ei)) / (h * h)
            for j in range(i):
                ej = np.zeros(n)
                ej[j] = h
                H[i, j] = H[j, i] = (
                    self(x + ei + ej) - self(x + ei - ej) - self(x - ei + ej) + self(x - ei - ej)
                ) / (4 * h * h)
        return H


def initial_state(spec: ModelSpec, data, seed: int = 0) -> np.ndarray:
    """Unconstrained state from a static fit, used as the level of the first start."""
    y = _check_data(spec, data)
    if spec.is_copula:
        x = special.ndtri(np.clip(y, PIT_CLAMP, 1 - PIT_CLAMP))
        fit = em_static_mixture(x, spec.J, "mv-gaussian", seed=seed, check_size=False)
        parts = [simplex_inverse(fit.weights)] if spec.J > 1 else []
        for c in fit.components():
            parts.append(_copula_block(spec, c.corr, DEFAULT_T_SHAPE))
        return np.concatenate(parts)
    fit = em_static_mixture(y, spec.J, spec.family, seed=seed, check_size=False)
    return fit.to_state(spec)


def _start_vectors(layout: ParameterLayout, level, config: EstimationConfig, first=None):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    s = config.stationarity_bound
    L = layout.spec.n_state
    dyn = layout.dynamic
    b0 = np.where(dyn, 0.95 * s, 0.0)
    base = GasCoefficients(np.where(layout.fixed, layout.fixed_state, level * (1.0 - b0)), np.zeros(L), b0)
    starts = [layout.to_vector(first) if first is not None else layout.to_vector(base)]
    for _ in range(config.restarts - 1):
        lv = level + np.where(layout.fixed, 0.0, 0.1 * rng.standard_normal(L))
        b = np.where(dyn, rng.uniform(0.8, 0.98, L) * s, 0.0)
        a = np.where(dyn, rng.uniform(0.0, 0.1, L), 0.0)
        kappa = np.where(layout.fixed, layout.fixed_state, lv * (1.0 - b))
        starts.append(layout.to_vector(GasCoefficients(kappa, a, b)))
    return starts


def _optimize(obj: _Objective, x0, config: EstimationConfig, max_relaunches: int = 5):
    h = config.fd_step
    bounds = obj.layout.bounds(config.nonnegative_a)
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    x = np.maximum(x0, lower)
    budget = config.max_iterations
    for _ in range(max_relaunches + 1):
        res = optimize.minimize(
            obj,
            x,
            jac=lambda v: obj.grad(v, h),
            method="L-BFGS-B",
            bounds=bounds,
            options={"gtol": config.gradient_tolerance, "maxiter": budget, "ftol": 1e-13},
        )
        gmax = _projected_gradient_max(obj.grad(res.x, h), res.x, lower) if res.x.size else 0.0
        budget -= int(res.nit)
        stalled = res.nit == 0 or not obj(res.x) < obj(x)
        x = res.x
        # The line search can stop on a tiny relative decrease far from a
        # stationary point; relaunching discards the stale curvature memory.
        if gmax < GRADIENT_ACCEPT or stalled or budget <= 0:
            break
    return res, bool(gmax < GRADIENT_ACCEPT), gmax


def _projected_gradient_max(g, x, lower) -> float:
    g = np.where((x <= lower) & (g > 0), 0.0, g)
    return float(np.max(np.abs(g)))


def fit_ml(
    spec: ModelSpec,
    data,
    config: EstimationConfig | None = None,
    *,
    fixed_blocks=(),
    fixed_state=None,
    start: GasCoefficients | None = None,
    level=None,
    extra_starts=(),
) -> FitResult:
    """Maximize the filter log-likelihood over the free coefficients.

    ``fixed_blocks`` are frozen and held at ``fixed_state`` (an unconstrained
    state vector). ``start`` replaces the EM-based first start; ``level``
    replaces the EM state used to centre all starts. ``extra_starts`` are
    further candidate coefficients, e.g. the optima of nested restrictions.
    """
    config = config or EstimationConfig()
    fixed_blocks = tuple(sorted(set(fixed_blocks)))
    if fixed_blocks:
        spec = spec.with_frozen(spec.frozen_blocks | set(fixed_blocks))
    y = _check_data(spec, data)
    layout = ParameterLayout(
        spec, fixed_blocks, fixed_state, config.stationarity_bound, levels=config.parametrization == "level"
    )
    if level is None:
        level = initial_state(spec, y, seed=config.seed)
    level = np.where(layout.fixed, layout.fixed_state, np.asarray(level, dtype=float))
    obj = _Objective(layout, y)
    diagnostics = []
    best = None
    candidates = _start_vectors(layout, level, config, start)
    for c in extra_starts:
        try:
            candidates.append(layout.to_vector(c))
        except DomainError:
            candidates.append(None)
    for k, x0 in enumerate(candidates):
        if x0 is None or not np.isfinite(obj.loglik(x0)):
            diagnostics.append({"start": k, "status": "infeasible start"})
            continue
        res, converged, gmax = _optimize(obj, x0, config)
        ll = obj.loglik(res.x)
        diagnostics.append(
            {"start": k, "loglik": float(ll), "converged": converged, "nit": int(res.nit), "max_grad": gmax, "message": str(res.message)}
        )
        log.debug("start %d: loglik %.6f converged %s", k, ll, converged)
        if np.isfinite(ll) and (best is None or ll > best[0]):
            best = (ll, res.x, converged)
    if best is None:
        raise EstimationError("every optimizer start failed", {"starts": diagnostics})
    ll, x, converged = best
    se = None
    if config.standard_errors:
        se = _standard_errors(obj, layout, x)
    return FitResult(
        spec=spec,
        coefficients=layout.to_coeffs(x),
        loglik=float(ll),
        n_params=layout.n_free,
        n_obs=y.shape[0],
        converged=converged,
        free_labels=layout.labels,
        free_values=layout.natural(x),
        standard_errors=se,
        fixed_blocks=fixed_blocks,
        starts=diagnostics,
    )


def _standard_errors(obj: _Objective, layout: ParameterLayout, x):
    H = obj.hessian(x) * obj.T
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(x.size, np.nan)
    jd = layout.natural_jacobian_diag(x)
    var = np.diag(cov) * jd**2
    return np.where(var > 0, np.sqrt(np.abs(var)), np.nan)


# ---------------------------------------------------------------------------
# Component ordering (reporting only)
# ---------------------------------------------------------------------------


def permute_components(spec: ModelSpec, coeffs: GasCoefficients, perm) -> GasCoefficients:
    """Relabel components of a two-component model.

    For J = 2 swapping labels maps the weight state to its negative, which
    flips the sign of its intercept and keeps its loadings.
    """
    perm = list(perm)
    if sorted(perm) != list(range(spec.J)):
        raise SpecError("perm must be a permutation of the component indices")
    if perm == list(range(spec.J)):
        return coeffs.copy()
    if spec.J != 2:
        raise UnsupportedOperation("stick-breaking weights only permute in closed form for J = 2")
    out = coeffs.copy()
    for arr in (out.kappa, out.a_diag, out.b_diag):
        src = arr.copy()
        for j_new, j_old in enumerate(perm):
            arr[spec.component_slice(j_new)] = src[spec.component_slice(j_old)]
    out.kappa[: spec.n_weights] *= -1.0
    return out


def order_components(spec: ModelSpec, coeffs: GasCoefficients) -> GasCoefficients:
    """Sort components by the unconditional level of their first scale coordinate."""
    if "scale" not in dict(spec.blocks):
        return coeffs.copy()
    lv = coeffs.stationary_state()
    key = [lv[spec.block_slice("scale", j)][0] for j in range(spec.J)]
    perm = list(np.argsort(key, kind="stable"))
    if spec.J > 2 and perm != list(range(spec.J)):
        return coeffs.copy()
    return permute_components(spec, coeffs, perm)


# ---------------------------------------------------------------------------
# Conditional CDF and the two-step copula fit
# ---------------------------------------------------------------------------


def conditional_cdf(spec: ModelSpec, trace: FilterTrace, data) -> np.ndarray:
    """Mixture CDF of each observation under its time-t parameters (univariate specs)."""
    if spec.family not in ("uni-gaussian", "uni-student-t"):
        raise UnsupportedOperation("conditional CDF is defined for univariate families")
    y = np.asarray(data, dtype=float).reshape(-1)
    th = trace.theta_tilde
    out = np.zeros_like(y)
    for j in range(spec.J):
        blk = th[:, spec.component_slice(j)]
        if spec.family == "uni-gaussian":
            cdf = special.ndtr((y - blk[:, 0]) / np.exp(0.5 * blk[:, 1]))
        else:
            cdf = special.stdtr(np.exp(blk[:, 2]) + spec.shape_offset, (y - blk[:, 0]) / np.exp(blk[:, 1]))
        out += trace.weights[:, j] * cdf
    return out


def clamp_pits(u):
    u = np.asarray(u, dtype=float)
    n = int(np.sum((u < PIT_CLAMP) | (u > 1 - PIT_CLAMP)))
    return np.clip(u, PIT_CLAMP, 1 - PIT_CLAMP), n


@dataclass
class TwoStepResult:
    marginals: list
    copula: FitResult
    pits: np.ndarray
    clamped: int

    @property
    def loglik(self) -> float:
        return sum(m.loglik for m in self.marginals) + self.copula.loglik


def two_step_copula_fit(
    spec: ModelSpec,
    data,
    marginal_spec: ModelSpec,
    config: EstimationConfig | None = None,
    *,
    marginal_fixed_blocks=(),
    marginal_fixed_state=None,
) -> TwoStepResult:
    """Inference functions for margins: fit each margin, then the copula on the PITs.

    The copula shape of a t-copula is estimated as a static coefficient.
    """
    if not spec.is_copula:
        raise SpecError("two_step_copula_fit needs a copula family")
    if marginal_spec.family not in ("uni-gaussian", "uni-student-t"):
        raise SpecError("marginal spec must be univariate")
    config = config or EstimationConfig()
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.d:
        raise SpecError(f"data must be T x {spec.d}")
    marginals = []
    pits = np.empty_like(y)
    for i in range(spec.d):
        fit = fit_ml(
            marginal_spec, y[:, i], config, fixed_blocks=marginal_fixed_blocks, fixed_state=marginal_fixed_state
        )
        marginals.append(fit)
        pits[:, i] = conditional_cdf(fit.spec, fit.filter(y[:, i]), y[:, i])
    pits, clamped = clamp_pits(pits)
    if clamped:
        log.warning("%d PIT values clamped to [%g, 1 - %g]", clamped, PIT_CLAMP, PIT_CLAMP)
    cop = fit_ml(spec, pits, config)
    return TwoStepResult(marginals, cop, pits, clamped)
