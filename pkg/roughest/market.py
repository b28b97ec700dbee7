"""Synthetic high-frequency prices under the two volatility models.

piecewise: sigma^2 is constant on blocks of length delta = 2^-N_vol,
    sigma^2 = sigma0^2 exp(eta W^H) sampled at each block's left end.
general: sigma^2_t = sigma0^2 exp(eta W^H_t) on a fine grid; each
    observation interval receives its left-Riemann integrated variance.

Given the volatility path, price increments are exactly Gaussian, so they
are drawn directly rather than by stepping an SDE.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError, OutputError
from .fbm import make_rng, sample_fbm_paths

logger = logging.getLogger(__name__)

ModelKind = Literal["piecewise", "general"]

# The general model is analysed for H < 3/4 only.
GENERAL_H_LIMIT = 0.75


@dataclass(frozen=True)
class ModelParams:
    """Model parameters and the compact parameter set they live in."""
    H: float
    eta: float
    sigma0: float = 1.0
    h_minus: float = 0.05
    h_plus: float = 0.7
    eta_minus: float = 0.1
    eta_plus: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.h_minus < self.h_plus < 1.0:
            raise ConfigError(f"need 0 < H_- < H_+ < 1, got ({self.h_minus}, {self.h_plus})")
        if not 0.0 < self.eta_minus < self.eta_plus:
            raise ConfigError(f"need 0 < eta_- < eta_+, got ({self.eta_minus}, {self.eta_plus})")
        if not self.h_minus <= self.H <= self.h_plus:
            raise ConfigError(f"H={self.H} outside [{self.h_minus}, {self.h_plus}]")
        # eta = 0 is a degenerate configuration kept for noise-only tests
        if self.eta != 0.0 and not self.eta_minus <= self.eta <= self.eta_plus:
            raise ConfigError(f"eta={self.eta} outside [{self.eta_minus}, {self.eta_plus}]")
        if self.sigma0 <= 0:
            raise ConfigError(f"sigma0 must be positive, got {self.sigma0}")

    def check_model(self, kind: ModelKind) -> None:
        if kind == "general" and self.h_plus >= GENERAL_H_LIMIT:
            raise ConfigError(f"general model requires H_+ < {GENERAL_H_LIMIT}, got {self.h_plus}")


@dataclass(frozen=True)
class PriceSeries:
    """Observed prices S_{i/n}, i = 0..n, with n = 2^N.

    `latent` holds eta*W^H on the delta-grid (piecewise) or the per-interval
    integrated variance (general); `shocks` holds the Gaussian draws xi.
    """
    N: int
    values: np.ndarray
    model_kind: ModelKind
    seed: int
    N_vol: Optional[int] = None
    oversample: Optional[int] = None
    latent: Optional[np.ndarray] = field(default=None, repr=False)
    shocks: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.values) != 2**self.N + 1:
            raise DomainError(f"expected {2**self.N + 1} prices, got {len(self.values)}")
        if self.model_kind == "piecewise":
            if self.N_vol is None or not 0 <= self.N_vol <= self.N:
                raise ConfigError(f"piecewise series needs 0 <= N_vol <= N, got N_vol={self.N_vol}")

    @property
    def n(self) -> int:
        return 2**self.N

    @property
    def block_size(self) -> int:
        """m = n * delta observations per volatility block."""
        if self.N_vol is None:
            raise DomainError("block size is defined for piecewise series only")
        return 2 ** (self.N - self.N_vol)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def scaled(self, factor: float) -> "PriceSeries":
        """Same series with every price multiplied by factor."""
        return PriceSeries(
            N=self.N, values=self.values * factor, model_kind=self.model_kind, seed=self.seed,
            N_vol=self.N_vol, oversample=self.oversample, latent=self.latent, shocks=self.shocks,
        )


@dataclass(frozen=True)
class LogRVSeries:
    """Block log realized variances X_i = log(2^N_vol * sum of squared increments).

    Each block value is kept as log(mantissa) + exponent * log 2 with the
    binary split of its realized variance, so that rescaling prices by a
    power of two changes only the integer exponents.
    """
    log_mantissa: np.ndarray
    exponent: np.ndarray
    N_vol: int
    block_size: int

    def __post_init__(self):
        if len(self.log_mantissa) != 2**self.N_vol or len(self.exponent) != 2**self.N_vol:
            raise DomainError(f"expected {2**self.N_vol} block values")
        if not np.all(np.isfinite(self.log_mantissa)):
            raise DomainError("log realized variance contains non-finite values")

    @property
    def values(self) -> np.ndarray:
        return self.log_mantissa + self.exponent * math.log(2.0)


def _split_streams(seed: int) -> tuple[int, int]:
    children = np.random.SeedSequence(int(seed) % 2**64).spawn(2)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)


def simulate_piecewise(params: ModelParams, N: int, N_vol: int, seed: int) -> PriceSeries:
    """Prices under block-constant volatility.

    Args:
        params: Model parameters.
        N: Observation exponent, n = 2^N.
        N_vol: Block exponent, delta = 2^-N_vol.
        seed: Seed; the fBm and the price shocks use independent child streams.
    """
    params.check_model("piecewise")
    if not 0 <= N_vol <= N:
        raise ConfigError(f"need 0 <= N_vol <= N, got N_vol={N_vol}, N={N}")
    vol_seed, shock_seed = _split_streams(seed)

    blocks = 2**N_vol
    # a single block still needs the endpoints 0 and 1 of the delta-grid
    grid = sample_fbm_paths(params.H, max(N_vol, 1), 1.0, 1, vol_seed)[0]
    latent = params.eta * (grid if N_vol >= 1 else grid[::2])
    sigma = params.sigma0 * np.exp(0.5 * latent[:blocks])

    n = 2**N
    shocks = make_rng(shock_seed).standard_normal(n)
    increments = np.repeat(sigma, n // blocks) * math.sqrt(1.0 / n) * shocks
    values = np.concatenate([[0.0], np.cumsum(increments)])
    return PriceSeries(N=N, values=values, model_kind="piecewise", seed=int(seed), N_vol=N_vol,
                       latent=latent, shocks=shocks)


def simulate_general(params: ModelParams, N: int, oversample: int = 8, seed: int = 0) -> PriceSeries:
    """Prices under continuously varying log-volatility eta*W^H.

    W^H is drawn on 2^N * oversample points; the integrated variance of each
    observation interval is the left-Riemann sum of sigma0^2 exp(eta W^H).
    """
    params.check_model("general")
    if oversample < 1 or oversample & (oversample - 1):
        raise ConfigError(f"oversample must be a power of two, got {oversample}")
    vol_seed, shock_seed = _split_streams(seed)

    n = 2**N
    fine_exponent = N + int(math.log2(oversample))
    fine = params.eta * sample_fbm_paths(params.H, fine_exponent, 1.0, 1, vol_seed)[0]
    spot = params.sigma0**2 * np.exp(fine[:-1])
    integrated = spot.reshape(n, oversample).sum(axis=1) / (n * oversample)

    shocks = make_rng(shock_seed).standard_normal(n)
    values = np.concatenate([[0.0], np.cumsum(np.sqrt(integrated) * shocks)])
    return PriceSeries(N=N, values=values, model_kind="general", seed=int(seed),
                       oversample=oversample, latent=integrated, shocks=shocks)


def log_realized_variance(prices: PriceSeries) -> LogRVSeries:
    """Block log realized variances of a piecewise-model series."""
    if prices.model_kind != "piecewise":
        raise DomainError("log realized variance is defined for piecewise series")
    m = prices.block_size
    # delta^-1 = 2^N_vol blocks per unit time
    rv = (prices.n // m) * np.square(prices.increments).reshape(-1, m).sum(axis=1)
    if np.any(rv <= 0.0):
        raise DomainError("a block has zero realized variance")
    mantissa, exponent = np.frexp(rv)
    return LogRVSeries(log_mantissa=np.log(mantissa), exponent=exponent.astype(np.int64),
                       N_vol=prices.N_vol, block_size=m)


# ============== CSV export ==============

def write_price_csv(prices: PriceSeries, path: Path) -> Path:
    """Write `t,S` rows with 17 significant digits."""
    path = Path(path)
    frame = pd.DataFrame({"t": np.arange(prices.n + 1) / prices.n, "S": prices.values})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_price_csv(path: Path, model_kind: ModelKind = "piecewise", N_vol: Optional[int] = None,
                   seed: int = 0) -> PriceSeries:
    """Load a `t,S` file written by write_price_csv."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise OutputError(f"cannot read {path}: {e}") from e
    if list(frame.columns) != ["t", "S"]:
        raise DomainError(f"{path}: expected columns t,S, got {list(frame.columns)}")
    n = len(frame) - 1
    N = int(round(math.log2(n))) if n > 0 else -1
    if n < 1 or 2**N != n:
        raise DomainError(f"{path}: number of intervals {n} is not a power of two")
    return PriceSeries(N=N, values=frame["S"].to_numpy(), model_kind=model_kind, seed=seed, N_vol=N_vol)
