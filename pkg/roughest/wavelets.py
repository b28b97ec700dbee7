"""Pre-averaged detail coefficients and energy levels.

Piecewise model: second differences of the block log-volatility on the
delta-grid, averaged over 2^p shifted copies,

    d_{j,k,p} = 2^{-j/2-p} sum_{l<2^p} X((k + l 2^-p) 2^-j) - 2 X((k+1 + l 2^-p) 2^-j)
                                      + X((k+2 + l 2^-p) 2^-j).

General model: first differences between adjacent dyadic blocks of the
log of 2^p sub-interval integrated variances (or squared price increments
for the empirical version).

Energies Q_{j,p} sum d^2 over k = 0 .. 2^(j-1) - 1. Empirical energies
subtract the expected squared noise term and may come out negative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .errors import DomainError, EstimationError
from .market import LogRVSeries, ModelKind, PriceSeries, log_realized_variance
from .special import chi2_log_variance, lognormal_sq_moments

logger = logging.getLogger(__name__)

Order = Literal["second", "first"]
Level = tuple[int, int]

# smallest scale with a full k-range: second differences need j >= 2
MIN_SCALE = {"piecewise": 2, "general": 1}


def _grid_exponent(length: int) -> int:
    if length < 2:
        raise DomainError(f"series too short for a dyadic grid: {length} values")
    return int(math.floor(math.log2(length)))


# ============== Detail coefficients ==============

def details_piecewise(X: np.ndarray, j: int, p: int) -> np.ndarray:
    """Second-order details d_{j,k,p} for every k < 2^(j-1).

    X holds values on the grid i * 2^-N_vol, either 2^N_vol block values or
    2^N_vol + 1 grid points.
    """
    X = np.asarray(X, dtype=float)
    available = _grid_exponent(len(X))
    if j < 2 or p < 0 or j + p > available:
        raise DomainError(f"need j >= 2, p >= 0 and j + p <= {available}, got j={j}, p={p}")
    spread = 2 ** (available - j - p)
    k = np.arange(2 ** (j - 1))[:, None]
    l = np.arange(2**p)[None, :]
    base = (k * 2**p + l) * spread
    jump = 2**p * spread
    second = X[base] - 2.0 * X[base + jump] + X[base + 2 * jump]
    return second.sum(axis=1) * 2.0 ** (-j / 2 - p)


def detail_piecewise(X: np.ndarray, j: int, k: int, p: int) -> float:
    if not 0 <= k < 2 ** (j - 1):
        raise DomainError(f"k={k} outside 0..{2 ** (j - 1) - 1}")
    return float(details_piecewise(X, j, p)[k])


def details_general(logvals: np.ndarray, j: int, p: int) -> np.ndarray:
    """First-order block details for every k < 2^(j-1).

    logvals holds one log quantity per dyadic interval of length 2^-(j+p).
    """
    logvals = np.asarray(logvals, dtype=float)
    if j < 1 or p < 0 or len(logvals) != 2 ** (j + p):
        raise DomainError(
            f"details at (j={j}, p={p}) need {2 ** (j + p)} interval values, got {len(logvals)}"
        )
    blocks = logvals.reshape(2**j, 2**p).sum(axis=1)
    half = 2 ** (j - 1)
    return (blocks[1 : half + 1] - blocks[:half]) * 2.0 ** (-p - j / 2)


def detail_general(logvals: np.ndarray, j: int, k: int, p: int) -> float:
    if not 0 <= k < 2 ** (j - 1):
        raise DomainError(f"k={k} outside 0..{2 ** (j - 1) - 1}")
    return float(details_general(logvals, j, p)[k])


def aggregate_log(values: np.ndarray, level: int) -> np.ndarray:
    """log of sums of positive per-interval quantities over 2^level dyadic blocks."""
    values = np.asarray(values, dtype=float)
    if len(values) % 2**level:
        raise DomainError(f"{len(values)} intervals cannot be grouped into 2^{level} blocks")
    sums = values.reshape(2**level, -1).sum(axis=1)
    if np.any(sums <= 0.0):
        raise DomainError("non-positive integrated quantity, log undefined")
    return np.log(sums)


def log_integrated_variance(prices: PriceSeries, level: int) -> np.ndarray:
    """log of the true integrated variance over each interval of length 2^-level."""
    if prices.model_kind != "general" or prices.latent is None:
        raise DomainError("true integrated variance needs a simulated general-model series")
    if level > prices.N:
        raise DomainError(f"level {level} finer than the observation grid 2^{prices.N}")
    return aggregate_log(prices.latent, level)


def log_squared_increments(prices: PriceSeries, level: int) -> np.ndarray:
    """log (S_{(i+1)2^-level} - S_{i 2^-level})^2 for i < 2^level."""
    if not 0 <= level <= prices.N:
        raise DomainError(f"level {level} outside 0..{prices.N}")
    coarse = np.diff(prices.values[:: 2 ** (prices.N - level)])
    squared = np.square(coarse)
    if np.any(squared == 0.0):
        raise DomainError("zero price increment, log undefined")
    return np.log(squared)


# ============== Energies ==============

def energy_true(series: np.ndarray, j: int, p: int, order: Order = "second") -> float:
    """Q_{j,p} of a latent path.

    order="second": series is the log-volatility on the delta-grid.
    order="first": series holds positive per-interval integrated variances.
    """
    if order == "second":
        d = details_piecewise(series, j, p)
    elif order == "first":
        d = details_general(aggregate_log(series, j + p), j, p)
    else:
        raise DomainError(f"unknown detail order {order!r}")
    return float(np.dot(d, d))


def _logrv_details(X: Union[LogRVSeries, np.ndarray], j: int, p: int) -> np.ndarray:
    if isinstance(X, LogRVSeries):
        # exponents difference exactly, which keeps dyadic price rescaling invisible
        exact = details_piecewise(X.exponent.astype(float), j, p)
        return details_piecewise(X.log_mantissa, j, p) + math.log(2.0) * exact
    return details_piecewise(X, j, p)


def piecewise_noise_offset(j: int, p: int, m: int) -> float:
    """E[e^2] for one piecewise detail: 6 Var(eps_m) 2^(-j-p)."""
    return 6.0 * chi2_log_variance(m) * 2.0 ** (-j - p)


def general_noise_offset(j: int, p: int) -> float:
    """E[e^2] for one general detail: 2^(-j-p+1) Var(log xi^2)."""
    return 2.0 ** (-j - p + 1) * lognormal_sq_moments()[1]


def energy_empirical_piecewise(X: Union[LogRVSeries, np.ndarray], j: int, p: int, m: int,
                               debias: bool = True) -> float:
    """Debiased empirical energy from block log realized variances."""
    d = _logrv_details(X, j, p)
    offset = piecewise_noise_offset(j, p, m) if debias else 0.0
    return float(np.sum(d * d - offset))


def energy_empirical_general(prices: PriceSeries, j: int, p: int) -> float:
    """Debiased empirical energy from log squared price increments."""
    if j + p > prices.N:
        raise DomainError(f"need j + p <= {prices.N}, got j={j}, p={p}")
    d = details_general(log_squared_increments(prices, j + p), j, p)
    return float(np.sum(d * d - general_noise_offset(j, p)))


# ============== Ladders ==============

@dataclass(frozen=True)
class EnergyLevels:
    """Energies Q_{j,p} keyed by (j, p).

    `available` is the grid exponent the scales run over (N_vol for the
    piecewise model, N for the general one); `n` is the observation count.
    """
    kind: Literal["true", "empirical"]
    entries: Mapping[Level, float]
    n: int
    model_kind: ModelKind
    available: int
    N_vol: Optional[int] = None
    offsets: Mapping[Level, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))
        object.__setattr__(self, "offsets", dict(self.offsets))

    def __getitem__(self, level: Level) -> float:
        try:
            return self.entries[level]
        except KeyError:
            raise EstimationError(f"energy ladder has no level (j={level[0]}, p={level[1]})") from None

    def __contains__(self, level: Level) -> bool:
        return level in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def min_scale(self) -> int:
        return MIN_SCALE[self.model_kind]

    def selection_scales(self) -> list[int]:
        """Scales j whose selection level (j, available - j - 1) is present."""
        return [j for j in range(self.min_scale, self.available)
                if (j, self.available - j - 1) in self.entries]

    def to_frame(self) -> pd.DataFrame:
        rows = sorted(self.entries.items())
        return pd.DataFrame({"j": [k[0] for k, _ in rows], "p": [k[1] for k, _ in rows],
                             "Q": [v for _, v in rows]})

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path


def ladder_levels(available: int, min_scale: int) -> list[Level]:
    """Both level families: (j, available-j-1) and (j, available-j)."""
    levels = {(j, available - j - 1) for j in range(min_scale, available)}
    levels |= {(j, available - j) for j in range(min_scale, available + 1)}
    return sorted(levels)


def empirical_ladder(source: Union[PriceSeries, LogRVSeries]) -> EnergyLevels:
    """Empirical energies for the full ladder of a price series.

    A piecewise PriceSeries (or its LogRVSeries) yields second-order
    energies on the delta-grid; a general PriceSeries yields first-order
    energies from squared price increments.
    """
    if isinstance(source, PriceSeries) and source.model_kind == "piecewise":
        source = log_realized_variance(source)

    if isinstance(source, LogRVSeries):
        m, available = source.block_size, source.N_vol
        levels = ladder_levels(available, MIN_SCALE["piecewise"])
        entries = {lv: energy_empirical_piecewise(source, *lv, m) for lv in levels}
        offsets = {lv: piecewise_noise_offset(*lv, m) for lv in levels}
        logger.debug("piecewise ladder: %d levels, m=%d", len(levels), m)
        return EnergyLevels("empirical", entries, n=m * 2**available, model_kind="piecewise",
                            available=available, N_vol=available, offsets=offsets)

    prices = source
    available = prices.N
    levels = ladder_levels(available, MIN_SCALE["general"])
    logs = {}
    entries, offsets = {}, {}
    for j, p in levels:
        level = j + p
        if level not in logs:
            logs[level] = log_squared_increments(prices, level)
        d = details_general(logs[level], j, p)
        offsets[(j, p)] = general_noise_offset(j, p)
        entries[(j, p)] = float(np.sum(d * d - offsets[(j, p)]))
    logger.debug("general ladder: %d levels, n=%d", len(levels), prices.n)
    return EnergyLevels("empirical", entries, n=prices.n, model_kind="general", available=available)


def true_ladder(prices: PriceSeries) -> EnergyLevels:
    """Energies of the latent volatility retained by the simulator."""
    if prices.latent is None:
        raise DomainError("series carries no latent volatility")
    if prices.model_kind == "piecewise":
        available = prices.N_vol
        levels = ladder_levels(available, MIN_SCALE["piecewise"])
        entries = {lv: energy_true(prices.latent, *lv, order="second") for lv in levels}
        return EnergyLevels("true", entries, n=prices.n, model_kind="piecewise",
                            available=available, N_vol=available)
    available = prices.N
    levels = ladder_levels(available, MIN_SCALE["general"])
    entries = {lv: energy_true(prices.latent, *lv, order="first") for lv in levels}
    return EnergyLevels("true", entries, n=prices.n, model_kind="general", available=available)
