"""Exact simulation of fractional Brownian motion and its correlation kernels.

Paths are built from fractional Gaussian noise drawn by circulant embedding
(Davies-Harte) and cumulatively summed. Should the embedding produce a
negative eigenvalue beyond rounding level, the sampler falls back to a
dense factorisation of the increment covariance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.linalg import eigh, toeplitz

from .errors import DomainError, SimulationInfeasibleError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]
Method = Literal["auto", "circulant", "dense"]

# Relative size of negative circulant eigenvalues treated as rounding noise.
EIGENVALUE_TOLERANCE = 1e-10
# Largest number of increments the dense fallback will factorise.
DENSE_LIMIT = 2**16


def validate_hurst(H: float) -> float:
    """Return H as a float, raising DomainError unless 0 < H < 1."""
    H = float(H)
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {H}")
    return H


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for any Python integer seed (negative seeds wrap mod 2^64)."""
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


@dataclass(frozen=True)
class FbmPath:
    """A sampled path (W^H_{k*step})_{k=0..grid_size-1}."""
    hurst: float
    grid_size: int
    step: float
    values: np.ndarray
    seed: int

    def __post_init__(self):
        validate_hurst(self.hurst)
        if len(self.values) != self.grid_size:
            raise DomainError(f"path has {len(self.values)} values, expected {self.grid_size}")
        if self.values[0] != 0.0:
            raise DomainError("fBm path must start at 0")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("fBm path contains non-finite values")
        self.values.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.grid_size)


# ============== Covariance kernels ==============

def fbm_covariance(s: ArrayLike, t: ArrayLike, H: float) -> ArrayLike:
    """Cov(W^H_s, W^H_t) = 1/2 (s^2H + t^2H - |t - s|^2H) for s, t >= 0."""
    H = validate_hurst(H)
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr < 0) or np.any(t_arr < 0):
        raise DomainError("fbm_covariance is defined for non-negative times only")
    h2 = 2.0 * H
    out = 0.5 * (s_arr**h2 + t_arr**h2 - np.abs(t_arr - s_arr) ** h2)
    return float(out) if out.ndim == 0 else out


def increment_covariance(a: ArrayLike, b: ArrayLike, c: ArrayLike, d: ArrayLike, H: float) -> ArrayLike:
    """Cov(W_b - W_a, W_d - W_c) for a two-sided fBm; times may be any reals.

    Broadcasts over its four time arguments.
    """
    h2 = 2.0 * H
    return 0.5 * (
        np.abs(b - c) ** h2
        + np.abs(a - d) ** h2
        - np.abs(b - d) ** h2
        - np.abs(a - c) ** h2
    )


def first_diff_corr(x: ArrayLike, H: float) -> ArrayLike:
    """Correlation kernel of unit-spacing increments, D_H(x)."""
    h2 = 2.0 * H
    x = np.asarray(x, dtype=float)
    out = 0.5 * (np.abs(x + 1.0) ** h2 - 2.0 * np.abs(x) ** h2 + np.abs(x - 1.0) ** h2)
    return float(out) if out.ndim == 0 else out


# Binomial weights of the fourth difference, (-1)^(k+1) C(4, k) for k = 0..4.
_PHI_WEIGHTS = (-1.0, 4.0, -6.0, 4.0, -1.0)


def phi_corr(x: ArrayLike, H: float) -> ArrayLike:
    """Correlation kernel of unit-spacing second differences, phi_H(x).

    phi_H(0) = 4 - 2^2H; the kernel is even in x.
    """
    h2 = 2.0 * H
    x = np.asarray(x, dtype=float)
    out = sum(w * np.abs(x + k - 2.0) ** h2 for k, w in enumerate(_PHI_WEIGHTS))
    out = 0.5 * out
    return float(out) if np.ndim(out) == 0 else out


def fgn_autocovariance(k: ArrayLike, H: float) -> ArrayLike:
    """Autocovariance of unit-step fractional Gaussian noise at integer lag k."""
    return first_diff_corr(np.abs(k), H)


# ============== Sampling ==============

def _circulant_eigenvalues(n: int, H: float) -> np.ndarray:
    gamma = fgn_autocovariance(np.arange(n + 1), H)
    first_row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(first_row).real


def _sample_circulant(eigenvalues: np.ndarray, n: int, n_paths: int,
                      rng: np.random.Generator) -> np.ndarray:
    size = len(eigenvalues)
    noise = rng.standard_normal((n_paths, size)) + 1j * rng.standard_normal((n_paths, size))
    spectrum = np.sqrt(eigenvalues / size) * noise
    return np.fft.fft(spectrum, axis=1).real[:, :n]


def _sample_dense(n: int, H: float, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    if n > DENSE_LIMIT:
        raise SimulationInfeasibleError(
            f"dense fallback limited to {DENSE_LIMIT} increments, requested {n}"
        )
    cov = toeplitz(fgn_autocovariance(np.arange(n), H))
    w, v = eigh(cov)
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((n_paths, n)) @ factor.T


def sample_fbm_paths(H: float, N: int, T: float = 1.0, n_paths: int = 1, seed: int = 0,
                     method: Method = "auto") -> np.ndarray:
    """Draw independent fBm paths on the dyadic grid k*T/2^N.

    Args:
        H: Hurst parameter in (0, 1).
        N: Grid exponent; each path has 2^N + 1 points.
        T: Time horizon.
        n_paths: Number of independent paths.
        seed: Seed for the PCG64 generator.
        method: "circulant", "dense" or "auto" (circulant with dense fallback).

    Returns:
        Array of shape (n_paths, 2^N + 1) whose first column is zero.
    """
    H = validate_hurst(H)
    if N < 1:
        raise DomainError(f"grid exponent must be >= 1, got {N}")
    if T <= 0:
        raise DomainError(f"horizon must be positive, got {T}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")

    n = 2**N
    rng = make_rng(seed)
    use_dense = method == "dense"
    if method in ("auto", "circulant"):
        eigenvalues = _circulant_eigenvalues(n, H)
        floor = -EIGENVALUE_TOLERANCE * eigenvalues.max()
        if eigenvalues.min() < floor:
            if method == "circulant":
                raise SimulationInfeasibleError(
                    f"circulant embedding has eigenvalue {eigenvalues.min():.3e} for H={H}, N={N}"
                )
            logger.warning("circulant embedding failed for H=%s, N=%d; using dense factorisation", H, N)
            use_dense = True
        else:
            increments = _sample_circulant(np.clip(eigenvalues, 0.0, None), n, n_paths, rng)
    elif method != "dense":
        raise DomainError(f"unknown simulation method {method!r}")

    if use_dense:
        increments = _sample_dense(n, H, n_paths, rng)

    step = T / n
    paths = np.zeros((n_paths, n + 1))
    np.cumsum(increments * step**H, axis=1, out=paths[:, 1:])
    return paths


def sample_fbm(H: float, N: int, T: float = 1.0, seed: int = 0, method: Method = "auto") -> FbmPath:
    """Exact-in-law sample of W^H on k*T/2^N, k = 0..2^N.

    Deterministic given the seed, and equal to the first row of
    sample_fbm_paths for the same arguments.
    """
    values = sample_fbm_paths(H, N, T, n_paths=1, seed=seed, method=method)[0]
    return FbmPath(hurst=float(H), grid_size=2**N + 1, step=T / 2**N, values=values, seed=int(seed))
