"""Scalar special functions that also compile under numba."""

import math

from numba import njit

# Bernoulli-number coefficients of the digamma asymptotic series in 1/x^2.
_DIGAMMA_ASYM = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


@njit(cache=True)
def digamma_scalar(x):
    # Shift into x >= 10 with psi(x) = psi(x + 1) - 1/x, then use the asymptotic series.
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    p = inv2
    for c in _DIGAMMA_ASYM:
        series += c * p
        p *= inv2
    return acc + math.log(x) - 0.5 / x - series


@njit(cache=True)
def logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def logistic_deriv(x):
    s = logistic(x)
    return s * (1.0 - s)
