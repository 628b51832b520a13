"""Independent reference implementations used by several test modules.

Log-densities come from scipy.stats; derivatives are central finite
differences in the constrained parameters.
"""

import numpy as np
from scipy import special, stats

from damm.densities import GaussianCopulaParams, GaussianParams, MvGaussianParams, MvStudentTParams, StudentTParams, TCopulaParams
from damm.mappings import corr_map, unvechd, vechd

SCORE_FAMILIES = ("uni-gaussian", "uni-student-t", "mv-gaussian", "mv-student-t", "t-copula")


def random_corr(rng, d):
    return corr_map(rng.uniform(0.4, 2.7, d * (d - 1) // 2), d)


def random_component(family, rng, d=3):
    if family == "uni-gaussian":
        return GaussianParams(rng.normal(), rng.uniform(0.2, 3.0))
    if family == "uni-student-t":
        return StudentTParams(rng.normal(), rng.uniform(0.3, 2.0), rng.uniform(2.5, 30.0))
    if family == "mv-gaussian":
        return MvGaussianParams(rng.normal(size=d), rng.uniform(0.5, 2.0, d), random_corr(rng, d))
    if family == "mv-student-t":
        return MvStudentTParams(rng.normal(size=d), rng.uniform(0.5, 2.0, d), random_corr(rng, d), rng.uniform(3.0, 30.0))
    if family == "t-copula":
        return TCopulaParams(random_corr(rng, d), rng.uniform(3.0, 30.0))
    if family == "gaussian-copula":
        return GaussianCopulaParams(random_corr(rng, d))
    raise ValueError(family)


def random_observation(p, rng):
    """A draw near the bulk of the component (scipy samplers, not the package's)."""
    if isinstance(p, GaussianParams):
        return float(stats.norm.rvs(p.mean, np.sqrt(p.variance), random_state=rng))
    if isinstance(p, StudentTParams):
        return float(stats.t.rvs(p.shape, p.location, p.scale, random_state=rng))
    if isinstance(p, MvGaussianParams):
        return stats.multivariate_normal.rvs(p.mean, p.cov, random_state=rng)
    if isinstance(p, MvStudentTParams):
        return stats.multivariate_t.rvs(p.location, p.scale_matrix, df=p.shape, random_state=rng)
    return rng.uniform(0.02, 0.98, p.d)


def scipy_logpdf(y, p):
    if isinstance(p, GaussianParams):
        return stats.norm.logpdf(y, p.mean, np.sqrt(p.variance))
    if isinstance(p, StudentTParams):
        return stats.t.logpdf(y, p.shape, p.location, p.scale)
    if isinstance(p, MvGaussianParams):
        return stats.multivariate_normal.logpdf(y, p.mean, p.cov)
    if isinstance(p, MvStudentTParams):
        return stats.multivariate_t.logpdf(y, p.location, p.scale_matrix, df=p.shape)
    if isinstance(p, TCopulaParams):
        x = special.stdtrit(p.shape, y)
        return stats.multivariate_t.logpdf(x, np.zeros(p.d), p.corr, df=p.shape) - stats.t.logpdf(x, p.shape).sum()
    x = special.ndtri(y)
    return stats.multivariate_normal.logpdf(x, np.zeros(p.d), p.corr) - stats.norm.logpdf(x).sum()


def score_coordinates(p):
    """Constrained coordinates whose score is returned, and a rebuild function."""
    if isinstance(p, GaussianParams):
        return np.array([p.mean, p.variance]), lambda v: GaussianParams(v[0], v[1])
    if isinstance(p, StudentTParams):
        return np.array([p.location, p.scale, p.shape]), lambda v: StudentTParams(*v)
    if isinstance(p, MvGaussianParams):
        d = p.d
        vec = np.concatenate([p.mean, p.stdevs, vechd(p.corr)])
        return vec, lambda v: MvGaussianParams(v[:d], v[d : 2 * d], unvechd(v[2 * d :], d))
    if isinstance(p, MvStudentTParams):
        d = p.d
        vec = np.concatenate([p.location, p.scales, vechd(p.corr), [p.shape]])
        return vec, lambda v: MvStudentTParams(v[:d], v[d : 2 * d], unvechd(v[2 * d : -1], d), v[-1])
    if isinstance(p, TCopulaParams):
        # the copula shape is held fixed, so only the correlations carry a score
        return vechd(p.corr), lambda v: TCopulaParams(unvechd(v, p.d), p.shape)
    return vechd(p.corr), lambda v: GaussianCopulaParams(unvechd(v, p.d))


def fd_score(y, p, rel_step=1e-5):
    vec, rebuild = score_coordinates(p)
    out = np.empty(vec.size)
    for k in range(vec.size):
        h = rel_step * max(1.0, abs(vec[k]))
        up, dn = vec.copy(), vec.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (scipy_logpdf(y, rebuild(up)) - scipy_logpdf(y, rebuild(dn))) / (2 * h)
    return out


def relative_error(a, b):
    """Norm of the difference relative to the norm of the reference."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-8))


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
