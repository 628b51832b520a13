"""Link functions between unconstrained and constrained parameters.

Three building blocks:

* scalar links (identity, shifted exponential, bounded logistic),
* the stick-breaking map from R^{J-1} onto the open J-simplex,
* the hyperspherical-angle map from R^{d(d-1)/2} onto correlation matrices,
  R = Z'Z with Z upper triangular and unit-norm columns.

Each map comes with an analytic Jacobian; the full map of a model state is
block diagonal in these pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._numerics import logistic
from .densities import (
    ComponentParams,
    GaussianCopulaParams,
    GaussianParams,
    MvGaussianParams,
    MvStudentTParams,
    StudentTParams,
    TCopulaParams,
)
from .errors import DomainError, SpecError
from .model import ModelSpec, n_corr

# ---------------------------------------------------------------------------
# Scalar links
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarLink:
    kind: str = "identity"
    offset: float = 0.0
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "exponential", "bounded"):
            raise SpecError(f"unknown link kind {self.kind!r}")
        if self.kind == "bounded" and not self.lower < self.upper:
            raise SpecError("bounded link needs lower < upper")
        if self.kind == "exponential" and not (math.isfinite(self.offset) and self.offset >= 0):
            raise SpecError("exponential link offset must be finite and >= 0")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def exponential(cls, offset=0.0):
        return cls("exponential", offset=offset)

    @classmethod
    def bounded(cls, lower, upper):
        return cls("bounded", lower=lower, upper=upper)

    def apply(self, x: float) -> tuple[float, float]:
        """Return (value, d value / dx)."""
        x = float(x)
        if self.kind == "identity":
            return x, 1.0
        if self.kind == "exponential":
            e = math.exp(x)
            return e + self.offset, e
        width = self.upper - self.lower
        s = logistic(x)
        # Evaluate from the nearer bound to keep precision close to either bound.
        if x >= 0:
            value = self.upper - width * logistic(-x)
        else:
            value = self.lower + width * s
        return value, width * s * (1.0 - s)

    def inverse(self, value: float) -> float:
        if self.kind == "identity":
            return float(value)
        if self.kind == "exponential":
            if not value > self.offset:
                raise DomainError(f"value {value} not above offset {self.offset}")
            return math.log(value - self.offset)
        if not self.lower < value < self.upper:
            raise DomainError(f"value {value} outside ({self.lower}, {self.upper})")
        p = (value - self.lower) / (self.upper - self.lower)
        return math.log(p) - math.log1p(-p)


def scalar_link_apply(x: float, link: ScalarLink) -> tuple[float, float]:
    return link.apply(x)


# ---------------------------------------------------------------------------
# Simplex
# ---------------------------------------------------------------------------


def simplex_map(omega_tilde) -> np.ndarray:
    """Stick-breaking logistic map R^{J-1} -> open J-simplex."""
    omega_tilde = np.atleast_1d(np.asarray(omega_tilde, dtype=float))
    J = omega_tilde.size + 1
    w = np.empty(J)
    remaining = 1.0
    for j, x in enumerate(omega_tilde):
        w[j] = remaining * logistic(x)
        remaining *= logistic(-x)
    w[-1] = remaining
    return w


def simplex_jacobian(omega_tilde) -> np.ndarray:
    """J x (J-1) Jacobian of :func:`simplex_map`."""
    omega_tilde = np.atleast_1d(np.asarray(omega_tilde, dtype=float))
    J = omega_tilde.size + 1
    jac = np.zeros((J, J - 1))
    bound = 1.0
    for j in range(J - 1):
        x = omega_tilde[j]
        s = logistic(x)
        jac[j, j] = bound * s * (1.0 - s)
        for h in range(j):
            jac[j, h] = -jac[:j, h].sum() * s
        bound *= logistic(-x)
    jac[J - 1, :] = -jac[: J - 1, :].sum(axis=0)
    return jac


def simplex_inverse(weights) -> np.ndarray:
    """Unconstrained pre-image of a point in the open simplex."""
    w = np.asarray(weights, dtype=float)
    out = np.empty(w.size - 1)
    remaining = 1.0
    for j in range(w.size - 1):
        p = min(max(w[j] / remaining, 1e-12), 1 - 1e-12)
        out[j] = math.log(p) - math.log1p(-p)
        remaining -= w[j]
        if remaining <= 0:
            raise DomainError("weights must lie in the open simplex")
    return out


# ---------------------------------------------------------------------------
# Correlation matrices
# ---------------------------------------------------------------------------


def corr_pairs(d: int) -> list[tuple[int, int]]:
    """Index pairs (i, l), i < l, in the storage order of vechd."""
    return [(i, l) for i in range(d) for l in range(i + 1, d)]


def vechd(mat: np.ndarray) -> np.ndarray:
    d = mat.shape[0]
    return np.array([mat[i, l] for i, l in corr_pairs(d)])


def unvechd(rho, d: int) -> np.ndarray:
    out = np.eye(d)
    for k, (i, l) in enumerate(corr_pairs(d)):
        out[i, l] = out[l, i] = rho[k]
    return out


def _check_angles(rho_tilde, d: int) -> np.ndarray:
    rho_tilde = np.atleast_1d(np.asarray(rho_tilde, dtype=float))
    if rho_tilde.size != n_corr(d):
        raise SpecError(f"expected {n_corr(d)} angles for d={d}, got {rho_tilde.size}")
    return rho_tilde


def angle_matrix(rho_tilde, d: int) -> np.ndarray:
    """Upper-triangular Z with unit-norm columns built from the angles."""
    rho_tilde = _check_angles(rho_tilde, d)
    theta = unvechd(rho_tilde, d)
    z = np.zeros((d, d))
    z[0, 0] = 1.0
    for j in range(1, d):
        prod = 1.0
        for i in range(j):
            z[i, j] = math.cos(theta[i, j]) * prod
            prod *= math.sin(theta[i, j])
        z[j, j] = prod
    return z


def corr_map(rho_tilde, d: int) -> np.ndarray:
    z = angle_matrix(rho_tilde, d)
    r = z.T @ z
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def _angle_column_derivative(theta: np.ndarray, m: int, j: int) -> np.ndarray:
    """d Z[:, j] / d theta[m, j]."""
    d = theta.shape[0]
    dz = np.zeros(d)
    c = np.cos(theta[:, j])
    s = np.sin(theta[:, j])
    prefix = np.prod(s[:m])
    dz[m] = -s[m] * prefix
    prod = prefix * c[m]  # running product with sin(theta_m) swapped for cos(theta_m)
    for i in range(m + 1, j):
        dz[i] = c[i] * prod
        prod *= s[i]
    dz[j] = prod
    return dz


def corr_jacobian(rho_tilde, d: int) -> np.ndarray:
    """d vechd(R) / d angles via the product rule on Z'Z."""
    rho_tilde = _check_angles(rho_tilde, d)
    theta = unvechd(rho_tilde, d)
    z = angle_matrix(rho_tilde, d)
    pairs = corr_pairs(d)
    jac = np.zeros((len(pairs), len(pairs)))
    for col, (m, j) in enumerate(pairs):
        dz = _angle_column_derivative(theta, m, j)
        for row, (a, b) in enumerate(pairs):
            if b == j:
                jac[row, col] = z[:, a] @ dz
            elif a == j:
                jac[row, col] = dz @ z[:, b]
    return jac


def corr_jacobian_fd(rho_tilde, d: int, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of vechd(corr_map); fallback and test oracle."""
    rho_tilde = _check_angles(rho_tilde, d)
    m = rho_tilde.size
    jac = np.empty((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = step
        jac[:, k] = (vechd(corr_map(rho_tilde + e, d)) - vechd(corr_map(rho_tilde - e, d))) / (2 * step)
    return jac


def corr_to_angles(corr) -> np.ndarray:
    """Angles in (0, pi) whose hyperspherical map reproduces ``corr``."""
    corr = np.asarray(corr, dtype=float)
    d = corr.shape[0]
    try:
        z = np.linalg.cholesky(corr).T
    except np.linalg.LinAlgError:
        raise DomainError("correlation matrix is not positive definite") from None
    theta = np.zeros((d, d))
    for j in range(1, d):
        prod = 1.0
        for i in range(j):
            c = np.clip(z[i, j] / prod, -1.0, 1.0) if prod > 0 else 1.0
            theta[i, j] = math.acos(c)
            prod *= math.sin(theta[i, j])
    return vechd(theta)


# ---------------------------------------------------------------------------
# Full map of a model state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray
    components: tuple


def component_from_unconstrained(spec: ModelSpec, theta_j) -> ComponentParams:
    th = np.asarray(theta_j, dtype=float)
    d, fam, c = spec.d, spec.family, spec.shape_offset
    if fam == "uni-gaussian":
        return GaussianParams(th[0], math.exp(th[1]))
    if fam == "uni-student-t":
        return StudentTParams(th[0], math.exp(th[1]), math.exp(th[2]) + c)
    m = n_corr(d)
    if fam == "mv-gaussian":
        return MvGaussianParams(th[:d], np.exp(th[d : 2 * d]), corr_map(th[2 * d : 2 * d + m], d))
    if fam == "mv-student-t":
        corr = corr_map(th[2 * d : 2 * d + m], d)
        return MvStudentTParams(th[:d], np.exp(th[d : 2 * d]), corr, math.exp(th[2 * d + m]) + c)
    if fam == "t-copula":
        return TCopulaParams(corr_map(th[:m], d), math.exp(th[m]) + c)
    return GaussianCopulaParams(corr_map(th[:m], d))


def component_to_unconstrained(spec: ModelSpec, p: ComponentParams) -> np.ndarray:
    c = spec.shape_offset
    if isinstance(p, GaussianParams):
        return np.array([p.mean, math.log(p.variance)])
    if isinstance(p, StudentTParams):
        return np.array([p.location, math.log(p.scale), math.log(p.shape - c)])
    if isinstance(p, MvGaussianParams):
        return np.concatenate([p.mean, np.log(p.stdevs), corr_to_angles(p.corr)])
    if isinstance(p, MvStudentTParams):
        return np.concatenate(
            [p.location, np.log(p.scales), corr_to_angles(p.corr), [math.log(p.shape - c)]]
        )
    if isinstance(p, TCopulaParams):
        return np.concatenate([corr_to_angles(p.corr), [math.log(p.shape - c)]])
    return corr_to_angles(p.corr)


def component_vector(p: ComponentParams) -> np.ndarray:
    """Constrained parameters of a component in score order."""
    if isinstance(p, GaussianParams):
        return np.array([p.mean, p.variance])
    if isinstance(p, StudentTParams):
        return np.array([p.location, p.scale, p.shape])
    if isinstance(p, MvGaussianParams):
        return np.concatenate([p.mean, p.stdevs, vechd(p.corr)])
    if isinstance(p, MvStudentTParams):
        return np.concatenate([p.location, p.scales, vechd(p.corr), [p.shape]])
    if isinstance(p, TCopulaParams):
        return np.concatenate([vechd(p.corr), [p.shape]])
    return vechd(p.corr)


def component_jacobian(spec: ModelSpec, theta_j) -> np.ndarray:
    """d (constrained component vector) / d theta_j (square, block diagonal)."""
    th = np.asarray(theta_j, dtype=float)
    d, fam = spec.d, spec.family
    n = th.size
    jac = np.zeros((n, n))
    m = n_corr(d)
    if fam in ("uni-gaussian", "uni-student-t"):
        jac[0, 0] = 1.0
        for k in range(1, n):
            jac[k, k] = math.exp(th[k])
        return jac
    if fam in ("mv-gaussian", "mv-student-t"):
        jac[:d, :d] = np.eye(d)
        jac[d : 2 * d, d : 2 * d] = np.diag(np.exp(th[d : 2 * d]))
        cs = slice(2 * d, 2 * d + m)
        jac[cs, cs] = corr_jacobian(th[cs], d)
        if fam == "mv-student-t":
            jac[-1, -1] = math.exp(th[-1])
        return jac
    jac[:m, :m] = corr_jacobian(th[:m], d)
    if fam == "t-copula":
        jac[-1, -1] = math.exp(th[-1])
    return jac


def assemble_full_map(spec: ModelSpec, theta_tilde) -> tuple[MixtureParams, np.ndarray]:
    """Map a full unconstrained state to mixture parameters plus the Jacobian.

    The Jacobian rows follow ``[weights (J), component 1, ..., component J]``
    and columns follow the unconstrained layout, so its shape is (L + 1) x L
    when J > 1 (the weights block is J x (J - 1)) and L x L when J = 1.
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.shape != (spec.n_state,):
        raise SpecError(f"state length {theta_tilde.size} does not match layout length {spec.n_state}")
    nw, J, dj = spec.n_weights, spec.J, spec.component_size
    rows = (J if J > 1 else 0) + J * dj
    jac = np.zeros((rows, spec.n_state))
    if J > 1:
        weights = simplex_map(theta_tilde[:nw])
        jac[:J, :nw] = simplex_jacobian(theta_tilde[:nw])
        r0 = J
    else:
        weights = np.ones(1)
        r0 = 0
    comps = []
    for j in range(J):
        sl = spec.component_slice(j)
        comps.append(component_from_unconstrained(spec, theta_tilde[sl]))
        r = r0 + j * dj
        jac[r : r + dj, sl] = component_jacobian(spec, theta_tilde[sl])
    return MixtureParams(weights, tuple(comps)), jac


def constrained_vector(params: MixtureParams) -> np.ndarray:
    parts = [params.weights] if params.weights.size > 1 else []
    parts.extend(component_vector(c) for c in params.components)
    return np.concatenate(parts)
