"""Log-density kernels for the mixture component families.

Everything is evaluated in log space. Univariate kernels accept scalar or
array observations; multivariate kernels accept a single ``(d,)`` vector or a
``(n, d)`` stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special

from ._numerics import digamma_scalar
from .errors import DomainError

LOG_2PI = math.log(2.0 * math.pi)

# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


def _check_corr(corr: np.ndarray, d: int) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (d, d):
        raise DomainError(f"correlation matrix must be {d}x{d}, got {corr.shape}")
    if not np.allclose(corr, corr.T, atol=1e-10):
        raise DomainError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-10):
        raise DomainError("correlation matrix must have unit diagonal")
    return corr


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class StudentTParams:
    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"scale must be positive, got {self.scale}")
        if not self.shape > 0:
            raise DomainError(f"shape must be positive, got {self.shape}")


@dataclass(frozen=True)
class MvGaussianParams:
    mean: np.ndarray
    stdevs: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        stdevs = np.atleast_1d(np.asarray(self.stdevs, dtype=float))
        if stdevs.shape != mean.shape:
            raise DomainError("mean and stdevs must have equal length")
        if np.any(stdevs <= 0):
            raise DomainError("stdevs must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stdevs", stdevs)
        object.__setattr__(self, "corr", _check_corr(self.corr, mean.size))

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.stdevs[:, None] * self.corr * self.stdevs[None, :]


@dataclass(frozen=True)
class MvStudentTParams:
    location: np.ndarray
    scales: np.ndarray
    corr: np.ndarray
    shape: float

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if scales.shape != loc.shape:
            raise DomainError("location and scales must have equal length")
        if np.any(scales <= 0):
            raise DomainError("scales must be positive")
        if not self.shape > 0:
            raise DomainError(f"shape must be positive, got {self.shape}")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "corr", _check_corr(self.corr, loc.size))

    @property
    def d(self) -> int:
        return self.location.size

    @property
    def scale_matrix(self) -> np.ndarray:
        return self.scales[:, None] * self.corr * self.scales[None, :]


@dataclass(frozen=True)
class TCopulaParams:
    corr: np.ndarray
    shape: float

    def __post_init__(self):
        corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        object.__setattr__(self, "corr", _check_corr(corr, corr.shape[0]))
        if not self.shape > 0:
            raise DomainError(f"shape must be positive, got {self.shape}")

    @property
    def d(self) -> int:
        return self.corr.shape[0]


@dataclass(frozen=True)
class GaussianCopulaParams:
    corr: np.ndarray

    def __post_init__(self):
        corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        object.__setattr__(self, "corr", _check_corr(corr, corr.shape[0]))

    @property
    def d(self) -> int:
        return self.corr.shape[0]


ComponentParams = Union[
    GaussianParams,
    StudentTParams,
    MvGaussianParams,
    MvStudentTParams,
    TCopulaParams,
    GaussianCopulaParams,
]

# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------


def digamma(x: float) -> float:
    """Digamma function for x > 0 (recurrence shift plus asymptotic series)."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    return float(digamma_scalar(x))


def student_t_quantile(u, shape):
    """Inverse CDF of the standard Student-t with ``shape`` degrees of freedom."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(np.isnan(u)):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    if not np.all(np.asarray(shape) > 0):
        raise DomainError("shape must be positive")
    x = special.stdtrit(shape, u)
    return float(x) if x.ndim == 0 else x


def _chol(corr: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix is not positive definite") from None


def _mahalanobis_terms(v: np.ndarray, corr: np.ndarray):
    """Return (quadratic form v' R^{-1} v, log|R|) for rows of ``v``."""
    chol = _chol(corr)
    z = np.linalg.solve(chol, np.atleast_2d(v).T)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return quad, logdet


def _squeeze(value, y):
    return float(value[0]) if np.ndim(y) == 1 else value


# ---------------------------------------------------------------------------
# Univariate kernels
# ---------------------------------------------------------------------------


def logpdf_gaussian(y, p: GaussianParams):
    y = np.asarray(y, dtype=float)
    out = -0.5 * (LOG_2PI + math.log(p.variance) + (y - p.mean) ** 2 / p.variance)
    return float(out) if out.ndim == 0 else out


def logpdf_student_t(y, p: StudentTParams):
    y = np.asarray(y, dtype=float)
    nu = p.shape
    e = (y - p.location) / p.scale
    out = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(nu * math.pi)
        - math.log(p.scale)
        - 0.5 * (nu + 1.0) * np.log1p(e * e / nu)
    )
    return float(out) if out.ndim == 0 else out


def cdf_gaussian(y, p: GaussianParams):
    return special.ndtr((np.asarray(y, dtype=float) - p.mean) / math.sqrt(p.variance))


def cdf_student_t(y, p: StudentTParams):
    return special.stdtr(p.shape, (np.asarray(y, dtype=float) - p.location) / p.scale)


# ---------------------------------------------------------------------------
# Multivariate kernels
# ---------------------------------------------------------------------------


def logpdf_mvgaussian(y, p: MvGaussianParams):
    y = np.asarray(y, dtype=float)
    v = (np.atleast_2d(y) - p.mean) / p.stdevs
    quad, logdet = _mahalanobis_terms(v, p.corr)
    out = -0.5 * (p.d * LOG_2PI + logdet + quad) - np.sum(np.log(p.stdevs))
    return _squeeze(out, y)


def logpdf_mvstudent_t(y, p: MvStudentTParams):
    y = np.asarray(y, dtype=float)
    d, nu = p.d, p.shape
    v = (np.atleast_2d(y) - p.location) / p.scales
    quad, logdet = _mahalanobis_terms(v, p.corr)
    out = (
        math.lgamma(0.5 * (nu + d))
        - math.lgamma(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * logdet
        - np.sum(np.log(p.scales))
        - 0.5 * (nu + d) * np.log1p(quad / nu)
    )
    return _squeeze(out, y)


def _check_unit_cube(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(np.isnan(u)):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    return u


def logpdf_tcopula(u, p: TCopulaParams):
    """t-copula log-density: joint t density over the product of its marginals."""
    u = _check_unit_cube(u)
    d, nu = p.d, p.shape
    x = student_t_quantile(np.atleast_2d(u), nu)
    joint = logpdf_mvstudent_t(x, MvStudentTParams(np.zeros(d), np.ones(d), p.corr, nu))
    marg = logpdf_student_t(x, StudentTParams(0.0, 1.0, nu)).sum(axis=1)
    return _squeeze(joint - marg, u)


def logpdf_gaussian_copula(u, p: GaussianCopulaParams):
    u = _check_unit_cube(u)
    x = special.ndtri(np.atleast_2d(u))
    quad, logdet = _mahalanobis_terms(x, p.corr)
    out = -0.5 * (logdet + quad - np.sum(x * x, axis=1))
    return _squeeze(out, u)


# ---------------------------------------------------------------------------
# Dispatch and mixtures
# ---------------------------------------------------------------------------

_LOGPDF = {
    GaussianParams: logpdf_gaussian,
    StudentTParams: logpdf_student_t,
    MvGaussianParams: logpdf_mvgaussian,
    MvStudentTParams: logpdf_mvstudent_t,
    TCopulaParams: logpdf_tcopula,
    GaussianCopulaParams: logpdf_gaussian_copula,
}

_CDF = {GaussianParams: cdf_gaussian, StudentTParams: cdf_student_t}


def component_logpdf(y, p: ComponentParams):
    try:
        fn = _LOGPDF[type(p)]
    except KeyError:
        raise DomainError(f"unknown component parameter type {type(p).__name__}") from None
    return fn(y, p)


def component_cdf(y, p: ComponentParams):
    try:
        fn = _CDF[type(p)]
    except KeyError:
        raise DomainError(f"no univariate CDF for {type(p).__name__}") from None
    return fn(y, p)


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
        raise DomainError(f"mixture weights must lie on the unit simplex, got {w}")
    return w


def component_logpdfs(y, components: Sequence[ComponentParams]) -> np.ndarray:
    kinds = {type(c) for c in components}
    if len(kinds) != 1:
        raise DomainError("mixture components must share one family")
    return np.array([component_logpdf(y, c) for c in components], dtype=float)


def mixture_logpdf(y, weights, components: Sequence[ComponentParams]) -> float:
    """log sum_j w_j p_j(y) with log-sum-exp stabilization."""
    w = _check_weights(weights)
    if w.size != len(components):
        raise DomainError("one weight per component is required")
    lp = component_logpdfs(y, components)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    logw = logw.reshape((-1,) + (1,) * (lp.ndim - 1))
    out = special.logsumexp(lp + logw, axis=0)
    return float(out) if np.ndim(out) == 0 else out


def mixture_cdf(y, weights, components: Sequence[ComponentParams]):
    w = _check_weights(weights)
    return sum(wj * component_cdf(y, c) for wj, c in zip(w, components))
