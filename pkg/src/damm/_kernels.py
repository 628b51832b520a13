"""Compiled filter used by estimation and simulation.

Mirrors :func:`damm.score.gas_step` for every family; the test suite checks
both engines against each other. Copula observations are passed in as
per-component quantiles ``x`` and marginal log-density sums, both computed
outside the kernel because they only depend on the (fixed) copula shape.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import special

from ._numerics import digamma_scalar, logistic
from .errors import DomainError, NumericError
from .model import ModelSpec, n_corr

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)

FAMILY_CODES = {
    "uni-gaussian": 0,
    "uni-student-t": 1,
    "mv-gaussian": 2,
    "mv-student-t": 3,
    "t-copula": 4,
    "gaussian-copula": 5,
}

OK, BAD_CORR, BAD_MIXTURE, BAD_SCORE = 0, 1, 2, 3


@njit(cache=True)
def _pair_index(i, l, d):
    return i * d - (i * (i + 1)) // 2 + (l - i - 1)


@njit(cache=True)
def _angle_matrix(angles, d, z, cs, sn):
    """Fill Z; cs/sn cache cos and sin of angle (i, j) at [i, j]."""
    for r in range(d):
        for c in range(d):
            z[r, c] = 0.0
    z[0, 0] = 1.0
    for j in range(1, d):
        prod = 1.0
        for i in range(j):
            th = angles[_pair_index(i, j, d)]
            cs[i, j] = math.cos(th)
            sn[i, j] = math.sin(th)
            z[i, j] = cs[i, j] * prod
            prod *= sn[i, j]
        z[j, j] = prod


@njit(cache=True)
def _corr_block(angles, d, z, zinv, rinv, cs, sn):
    """Fill Z, Z^{-1} and R^{-1} = Z^{-1} Z^{-T}; return log|R| or nan if R is singular.

    R = Z'Z with Z upper triangular, so Z' is a Cholesky factor up to column signs.
    """
    _angle_matrix(angles, d, z, cs, sn)
    logdet = 0.0
    for j in range(d):
        if abs(z[j, j]) < 1e-150:
            return np.nan
        logdet += 2.0 * math.log(abs(z[j, j]))
    # back substitution for the upper-triangular inverse, column by column
    for c in range(d):
        for i in range(c + 1, d):
            zinv[i, c] = 0.0
        for i in range(c, -1, -1):
            acc = 1.0 if i == c else 0.0
            for k in range(i + 1, c + 1):
                acc -= z[i, k] * zinv[k, c]
            zinv[i, c] = acc / z[i, i]
    for a in range(d):
        for b in range(a, d):
            acc = 0.0
            for k in range(b, d):
                acc += zinv[a, k] * zinv[b, k]
            rinv[a, b] = acc
            rinv[b, a] = acc
    return logdet


@njit(cache=True)
def _corr_jvp(d, z, cs, sn, grad, out, offset, wvec):
    """out[offset + k] = sum_p dR_p / d angle_k * grad_p (grad is a d x d symmetric map)."""
    for j in range(1, d):
        for r in range(d):
            acc = 0.0
            for a in range(d):
                if a != j:
                    acc += grad[a, j] * z[r, a]
            wvec[r] = acc
        for m in range(j):
            prefix = 1.0
            for k in range(m):
                prefix *= sn[k, j]
            # only rows m..j of column j depend on angle (m, j)
            acc = -sn[m, j] * prefix * wvec[m]
            prod = prefix * cs[m, j]
            for i in range(m + 1, j):
                acc += cs[i, j] * prod * wvec[i]
                prod *= sn[i, j]
            acc += prod * wvec[j]
            out[offset + _pair_index(m, j, d)] = acc


@njit(cache=True)
def _component(fam, th, y, x, lmarg, d, c, want, s, mats, vecs):
    """Log-density of one component; writes J' grad into s when ``want``.

    ``mats`` (6 x d x d) and ``vecs`` (3 x d) are scratch space.
    Returns (logpdf, status).
    """
    if fam == 0:
        e = y[0] - th[0]
        s2 = math.exp(th[1])
        lp = -0.5 * (LOG_2PI + th[1] + e * e / s2)
        if want:
            s[0] = e / s2
            s[1] = 0.5 * (e * e / s2 - 1.0)
        return lp, OK
    if fam == 1:
        e = y[0] - th[0]
        psi = math.exp(th[1])
        en = math.exp(th[2])
        nu = en + c
        denom = nu * psi * psi + e * e
        q = e * e / (nu * psi * psi)
        lp = (
            math.lgamma(0.5 * (nu + 1.0))
            - math.lgamma(0.5 * nu)
            - 0.5 * math.log(nu)
            - 0.5 * LOG_PI
            - th[1]
            - 0.5 * (nu + 1.0) * math.log1p(q)
        )
        if want:
            s[0] = (nu + 1.0) * e / denom
            s[1] = -1.0 + (nu + 1.0) * e * e / denom
            s[2] = en * (
                0.5 * digamma_scalar(0.5 * (nu + 1.0))
                - 0.5 * digamma_scalar(0.5 * nu)
                - 0.5 / nu
                - 0.5 * math.log1p(q)
                + 0.5 * (nu + 1.0) * e * e / (nu * denom)
            )
        return lp, OK

    m = d * (d - 1) // 2
    z = mats[0]
    zinv = mats[1]
    rinv = mats[2]
    grad = mats[3]
    cs = mats[4]
    sn = mats[5]
    v = vecs[0]
    g = vecs[1]
    wvec = vecs[2]

    logscale = 0.0
    if fam == 2 or fam == 3:
        angles = th[2 * d : 2 * d + m]
        logdet = _corr_block(angles, d, z, zinv, rinv, cs, sn)
        if np.isnan(logdet):
            return 0.0, BAD_CORR
        for i in range(d):
            v[i] = (y[i] - th[i]) / math.exp(th[d + i])
            logscale += th[d + i]
    else:
        angles = th[:m]
        logdet = _corr_block(angles, d, z, zinv, rinv, cs, sn)
        if np.isnan(logdet):
            return 0.0, BAD_CORR
        for i in range(d):
            v[i] = x[i]
    r = 0.0
    for a in range(d):
        acc = 0.0
        for b in range(d):
            acc += rinv[a, b] * v[b]
        g[a] = acc
        r += v[a] * acc

    shape = 0.0
    es = 0.0
    if fam == 2:
        lp = -0.5 * (d * LOG_2PI + logdet + r) - logscale
        w = 1.0
    elif fam == 5:
        xx = 0.0
        for i in range(d):
            xx += v[i] * v[i]
        lp = -0.5 * (logdet + r - xx)
        w = 1.0
    else:
        es = math.exp(th[th.size - 1])
        shape = es + c
        lp = (
            math.lgamma(0.5 * (shape + d))
            - math.lgamma(0.5 * shape)
            - 0.5 * d * (math.log(shape) + LOG_PI)
            - 0.5 * logdet
            - 0.5 * (shape + d) * math.log1p(r / shape)
        )
        if fam == 3:
            lp -= logscale
        else:
            lp -= lmarg
        w = (shape + d) / (shape + r)

    if want:
        for a in range(d):
            for b in range(d):
                grad[a, b] = w * g[a] * g[b] - rinv[a, b]
        if fam == 2 or fam == 3:
            for i in range(d):
                sc = math.exp(th[d + i])
                s[i] = w * g[i] / sc
                s[d + i] = w * v[i] * g[i] - 1.0
            _corr_jvp(d, z, cs, sn, grad, s, 2 * d, wvec)
            if fam == 3:
                s[2 * d + m] = es * (
                    0.5 * digamma_scalar(0.5 * (shape + d))
                    - 0.5 * digamma_scalar(0.5 * shape)
                    - 0.5 * d / shape
                    - 0.5 * math.log1p(r / shape)
                    + 0.5 * (shape + d) * r / (shape * (shape + r))
                )
        else:
            _corr_jvp(d, z, cs, sn, grad, s, 0, wvec)
            if fam == 4:
                s[m] = 0.0
    return lp, OK


@njit(cache=True)
def _filter(fam, d, J, dj, kappa, a_diag, b_diag, init, y, xq, lmarg, c, want, states, xis, lls):
    """Returns (total loglik, status, t of failure)."""
    T = y.shape[0]
    L = kappa.size
    nw = J - 1
    state = init.copy()
    lp = np.empty(J)
    wts = np.empty(J)
    scores = np.empty((J, dj))
    full = np.zeros(L)
    wjac = np.zeros((J, max(nw, 1)))
    mats = np.empty((6, d, d))
    vecs = np.empty((3, d))
    total = 0.0
    for t in range(T):
        for k in range(L):
            states[t, k] = state[k]
        # weights and their Jacobian (stick breaking)
        if J == 1:
            wts[0] = 1.0
        else:
            bound = 1.0
            for jj in range(nw):
                sg = logistic(state[jj])
                wts[jj] = bound * sg
                if want:
                    wjac[jj, jj] = bound * sg * (1.0 - sg)
                    for h in range(jj):
                        acc = 0.0
                        for k in range(jj):
                            acc += wjac[k, h]
                        wjac[jj, h] = -acc * sg
                bound *= logistic(-state[jj])
            wts[J - 1] = bound
            if want:
                for h in range(nw):
                    acc = 0.0
                    for k in range(nw):
                        acc += wjac[k, h]
                    wjac[J - 1, h] = -acc
        # component log-densities and scores
        mx = -np.inf
        for j in range(J):
            off = nw + j * dj
            val, status = _component(
                fam, state[off : off + dj], y[t], xq[t, j], lmarg[t, j], d, c, want, scores[j], mats, vecs
            )
            if status != OK:
                return np.nan, status, t
            lp[j] = val
            if wts[j] > 0.0 and val + math.log(wts[j]) > mx:
                mx = val + math.log(wts[j])
        if not np.isfinite(mx):
            return np.nan, BAD_MIXTURE, t
        acc = 0.0
        for j in range(J):
            if wts[j] > 0.0:
                acc += math.exp(lp[j] + math.log(wts[j]) - mx)
        lmix = mx + math.log(acc)
        lls[t] = lmix
        total += lmix
        for j in range(J):
            xis[t, j] = wts[j] * math.exp(lp[j] - lmix)
        if want:
            for h in range(nw):
                acc = 0.0
                for j in range(J):
                    acc += wjac[j, h] * math.exp(lp[j] - lmix)
                full[h] = acc
            for j in range(J):
                off = nw + j * dj
                for k in range(dj):
                    full[off + k] = xis[t, j] * scores[j, k] if xis[t, j] > 0.0 else 0.0
            for k in range(L):
                if not np.isfinite(full[k]):
                    return np.nan, BAD_SCORE, t
            for k in range(L):
                state[k] = kappa[k] + a_diag[k] * full[k] + b_diag[k] * state[k]
        else:
            for k in range(L):
                state[k] = kappa[k] + b_diag[k] * state[k]
    for k in range(L):
        states[T, k] = state[k]
    return total, OK, -1


def copula_inputs(spec: ModelSpec, u: np.ndarray, state: np.ndarray):
    """Per-component quantiles and marginal log-density sums for copula data."""
    T, d = u.shape
    J = spec.J
    xq = np.empty((T, J, d))
    lmarg = np.empty((T, J))
    if spec.family == "gaussian-copula":
        x = special.ndtri(u)
        lm = np.sum(-0.5 * (LOG_2PI + x * x), axis=1)
        xq[:] = x[:, None, :]
        lmarg[:] = lm[:, None]
        return xq, lmarg
    m = n_corr(d)
    for j in range(J):
        shape = math.exp(state[spec.component_slice(j)][m]) + spec.shape_offset
        x = special.stdtrit(shape, u)
        xq[:, j, :] = x
        lmarg[:, j] = np.sum(
            math.lgamma(0.5 * (shape + 1.0))
            - math.lgamma(0.5 * shape)
            - 0.5 * math.log(shape * math.pi)
            - 0.5 * (shape + 1.0) * np.log1p(x * x / shape),
            axis=1,
        )
    return xq, lmarg


def run_filter(spec: ModelSpec, coeffs, y: np.ndarray, init: np.ndarray, store: bool = True):
    """Run the compiled filter.

    With ``store`` returns (states T x L, xi T x J, loglik T, next state);
    otherwise the total log-likelihood only.
    """
    y = np.ascontiguousarray(y, dtype=float)
    T = y.shape[0]
    L = spec.n_state
    if spec.is_copula:
        xq, lmarg = copula_inputs(spec, y, init)
    else:
        xq = np.zeros((T, spec.J, 1))
        lmarg = np.zeros((T, spec.J))
    want = bool(np.any(coeffs.a_diag != 0.0))
    states = np.empty((T + 1, L))
    xis = np.empty((T, spec.J))
    lls = np.empty(T)
    try:
        total, status, t = _filter(
            FAMILY_CODES[spec.family],
            spec.d,
            spec.J,
            spec.component_size,
            coeffs.kappa,
            coeffs.a_diag,
            coeffs.b_diag,
            np.asarray(init, dtype=float),
            y,
            xq,
            lmarg,
            float(spec.shape_offset),
            want,
            states,
            xis,
            lls,
        )
    except ZeroDivisionError:
        # a scale or density underflowed to exactly zero
        raise NumericError("division by zero in the filter (parameter underflow)") from None
    if status == BAD_CORR:
        raise DomainError(f"correlation matrix lost positive definiteness at t={t}")
    if status == BAD_MIXTURE:
        raise NumericError(f"mixture density underflows to zero at t={t}", block="weights", t=t)
    if status == BAD_SCORE:
        raise NumericError(f"non-finite score at t={t}", t=t)
    if not store:
        return total
    return states[:T], xis, lls, states[T]
