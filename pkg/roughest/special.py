"""Polygamma functions and log-moments of chi-square variables.

Every noise offset used by the energy estimators is routed through this
module: the variance of a block log realized variance and the variance of
log xi^2 for a standard Gaussian xi.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.special import bernoulli

from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

# Upward recurrence moves every argument to at least this value before the
# asymptotic series is summed.
ASYMPTOTIC_THRESHOLD = 16.0
# Bernoulli terms B_2 .. B_12, i.e. the series runs through x^-12 for psi.
SERIES_TERMS = 6
MAX_ORDER = 3


@lru_cache(maxsize=1)
def _even_bernoulli() -> tuple[float, ...]:
    numbers = bernoulli(2 * SERIES_TERMS)
    return tuple(float(numbers[2 * i]) for i in range(1, SERIES_TERMS + 1))


def _asymptotic(k: int, x: np.ndarray) -> np.ndarray:
    """Large-argument expansion of psi^(k)(x), valid for x >= 16."""
    b2 = _even_bernoulli()
    if k == 0:
        out = np.log(x) - 0.5 / x
        x2 = x * x
        power = x2
        for i, b in enumerate(b2, start=1):
            out -= b / (2 * i * power)
            power = power * x2
        return out

    sign = -1.0 if k % 2 == 0 else 1.0
    out = math.factorial(k - 1) / x**k + math.factorial(k) / (2.0 * x ** (k + 1))
    for i, b in enumerate(b2, start=1):
        coef = math.factorial(2 * i + k - 1) / math.factorial(2 * i)
        out += b * coef / x ** (2 * i + k)
    return sign * out


def polygamma(k: int, x: ArrayLike) -> ArrayLike:
    """Polygamma function psi^(k)(x) for k in {0, 1, 2, 3} and x > 0.

    Arguments below the asymptotic threshold are shifted upward with
    psi^(k)(x) = psi^(k)(x + 1) - (-1)^k k! / x^(k+1).

    Args:
        k: Derivative order of the digamma function.
        x: Positive scalar or array.

    Returns:
        A float for scalar input, otherwise an array of the same shape.
    """
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= MAX_ORDER:
        raise DomainError(f"polygamma order must be an integer in [0, {MAX_ORDER}], got {k!r}")

    scalar = np.isscalar(x)
    z = np.array(x, dtype=float, copy=True, ndmin=1)
    if not np.all(np.isfinite(z)) or np.any(z <= 0.0):
        raise DomainError("polygamma requires finite x > 0")

    shift = np.zeros_like(z)
    step_sign = -1.0 if k % 2 else 1.0
    k_fact = float(math.factorial(k))
    small = z < ASYMPTOTIC_THRESHOLD
    while np.any(small):
        shift[small] += step_sign * k_fact / z[small] ** (k + 1)
        z[small] += 1.0
        small = z < ASYMPTOTIC_THRESHOLD

    out = _asymptotic(k, z) - shift
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(x))


def _check_dof(m: float) -> float:
    if m < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {m}")
    return float(m)


def chi2_log_mean(m: float) -> float:
    """E[log(chi2_m / m)] = psi(m/2) - log(m/2)."""
    half = _check_dof(m) / 2.0
    return polygamma(0, half) - math.log(half)


def chi2_log_variance(m: float) -> float:
    """Var(log(chi2_m / m)) = psi'(m/2)."""
    return polygamma(1, _check_dof(m) / 2.0)


def chi2_log_fourth_moment_bound(m: float) -> float:
    """Exact fourth moment E[Y_m^4] of Y_m = log(chi2_m / m).

    log(chi2_m / 2) has cumulants psi^(r-1)(m/2), so Y_m is that variable
    shifted by -log(m/2) and the raw fourth moment follows from the first
    four cumulants. The value behaves like 12 / m^2 for large m.
    """
    half = _check_dof(m) / 2.0
    mu = polygamma(0, half) - math.log(half)
    k2 = polygamma(1, half)
    k3 = polygamma(2, half)
    k4 = polygamma(3, half)
    return k4 + 4.0 * k3 * mu + 3.0 * k2 * k2 + 6.0 * k2 * mu * mu + mu**4


def lognormal_sq_moments() -> tuple[float, float]:
    """Mean and variance of log(xi^2) for a standard Gaussian xi."""
    return polygamma(0, 0.5) + math.log(2.0), polygamma(1, 0.5)
