"""Adaptive level selection and the estimators of (H, eta).

The scale ratio Q_{J+1,p} / Q_{J,p} concentrates at 2^(-2H) as long as the
energies dominate the noise floor 2^j / n, so every estimator first picks
the finest such scale J* and then inverts the ratio with log2.

General-model energies sum over k < 2^(j-1), half of the dyadic positions,
so E[Q_{j,p}] = ENERGY_SPAN * sum_a eta^(2a) 2^(-2aHj) kappa_{p,a}(H). The
bias subtracted from the ladder and the eta inversion both carry that span.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

from .errors import ConfigError, DomainError, EstimationError
from .kappa import bias_term, choose_S, kappa_p
from .kappa_table import KappaTable
from .market import LogRVSeries, PriceSeries
from .results import EstimateFlag, EstimateResult, IterationSnapshot
from .wavelets import EnergyLevels, empirical_ladder

logger = logging.getLogger(__name__)

ENERGY_SPAN = 0.5
# H_- used for the general model when no manifest sets one; choose_S(0.1, 0.7) = 4
GENERAL_H_MINUS = 0.1

Energy = Callable[[int, int], float]


def optimal_iterations(h_minus: float) -> int:
    """m_opt = max(floor(1/(4 H_-) - 2 H_-), 0)."""
    if h_minus <= 0:
        raise DomainError(f"H_- must be positive, got {h_minus}")
    return max(math.floor(1.0 / (4.0 * h_minus) - 2.0 * h_minus), 0)


def default_nu0(h_plus: float, eta_minus: float) -> float:
    """nu0 = 1/2 eta_-^2 min(3, (4 - 2^(2H_+)) 2^(2H_+))."""
    y = 2.0 ** (2.0 * h_plus)
    value = 0.5 * eta_minus**2 * min(3.0, (4.0 - y) * y)
    if value <= 0.0:
        logger.warning("default threshold collapses to %s at H_+=%s", value, h_plus)
        return 0.0
    return value


def nu0_ceiling(h_minus: float, h_plus: float, eta_minus: float) -> float:
    """inf over the parameter set of eta^2 kappa_0(H) 2^(2H)."""
    # (4 - y) y is concave in y = 4^H, so the infimum sits at an endpoint
    def scaled_kappa0(h: float) -> float:
        return (4.0 - 4.0**h) * 4.0**h

    return eta_minus**2 * min(scaled_kappa0(h_minus), scaled_kappa0(h_plus))


@dataclass(frozen=True)
class EstimatorConfig:
    """Parameter bounds and tuning of the estimators.

    nu0, S and m_opt default to the formulas of default_nu0, choose_S and
    optimal_iterations when left as None.
    """
    h_minus: float = 0.05
    h_plus: float = 0.7
    eta_minus: float = 0.1
    eta_plus: float = 5.0
    nu0: Optional[float] = None
    S: Optional[int] = None
    m_opt: Optional[int] = None
    log_base_two: bool = True
    experimental_eta: bool = False

    def __post_init__(self):
        if not 0.0 < self.h_minus < self.h_plus < 1.0:
            raise ConfigError(f"need 0 < H_- < H_+ < 1, got ({self.h_minus}, {self.h_plus})")
        if not 0.0 < self.eta_minus < self.eta_plus:
            raise ConfigError(f"need 0 < eta_- < eta_+, got ({self.eta_minus}, {self.eta_plus})")
        if not self.log_base_two:
            raise ConfigError("energy ratios are inverted in base 2 only")
        if self.nu0 is not None:
            ceiling = nu0_ceiling(self.h_minus, self.h_plus, self.eta_minus)
            if not 0.0 < self.nu0 < ceiling:
                raise ConfigError(f"nu0 must lie in (0, {ceiling:.6g}), got {self.nu0}")
        if self.S is not None and self.S < 1:
            raise ConfigError(f"S must be >= 1, got {self.S}")
        if self.m_opt is not None and self.m_opt < optimal_iterations(self.h_minus):
            raise ConfigError(
                f"m_opt={self.m_opt} below the {optimal_iterations(self.h_minus)} passes H_-={self.h_minus} needs"
            )

    @property
    def threshold(self) -> float:
        value = self.nu0 if self.nu0 is not None else default_nu0(self.h_plus, self.eta_minus)
        if value <= 0.0:
            raise ConfigError("selection threshold nu0 is degenerate; set it explicitly")
        return value

    @property
    def order(self) -> int:
        return self.S if self.S is not None else choose_S(self.h_minus, self.h_plus)

    @property
    def iterations(self) -> int:
        return self.m_opt if self.m_opt is not None else optimal_iterations(self.h_minus)

    @classmethod
    def for_model(cls, model: str) -> "EstimatorConfig":
        """Default bounds for the given model kind."""
        return cls(h_minus=GENERAL_H_MINUS) if model == "general" else cls()

    def clamp_H(self, H: float) -> float:
        return min(max(H, self.h_minus), self.h_plus)

    def clamp_eta(self, eta: float) -> float:
        return min(max(eta, self.eta_minus), self.eta_plus)


class LevelSelection(NamedTuple):
    level: int
    degenerate: bool


class RefineStep(NamedTuple):
    H: float
    eta: float
    J: int
    flags: tuple[str, ...]


def _log2_n(n: int) -> int:
    return n.bit_length() - 1


def _raw(ladder: EnergyLevels) -> Energy:
    return lambda j, p: ladder[(j, p)]


def select_level(ladder: EnergyLevels, threshold: float, n: Optional[int] = None,
                 energy: Optional[Energy] = None) -> LevelSelection:
    """Largest j with Q(j, A-j-1) >= threshold 2^j / n.

    Falls back to the smallest scale, flagged degenerate, when no level
    qualifies.
    """
    scales = ladder.selection_scales()
    if not scales:
        raise EstimationError("energy ladder has no selection levels")
    n = ladder.n if n is None else n
    energy = energy or _raw(ladder)
    A = ladder.available
    chosen = None
    for j in scales:
        if energy(j, A - j - 1) >= threshold * 2.0**j / n:
            chosen = j
    if chosen is None:
        logger.warning("no level above threshold %.4g, falling back to j=%d", threshold, scales[0])
        return LevelSelection(scales[0], True)
    return LevelSelection(chosen, False)


def select_level_piecewise(Q: EnergyLevels, nu0: float, n: Optional[int] = None) -> LevelSelection:
    return select_level(Q, nu0, n)


def _ratio_estimate(ladder: EnergyLevels, J: int, config: EstimatorConfig,
                    energy: Energy) -> tuple[float, list[str]]:
    p = ladder.available - J - 1
    upper, lower = energy(J + 1, p), energy(J, p)
    if lower <= 0.0 or upper / lower <= 0.0:
        logger.warning("non-positive energy ratio at J=%d (%.4g / %.4g)", J, upper, lower)
        return config.h_plus, [EstimateFlag.NONPOSITIVE_RATIO.value]
    raw = -0.5 * math.log2(upper / lower)
    H = config.clamp_H(raw)
    return H, [EstimateFlag.CLAMPED_H.value] if H != raw else []


def _eta_scale(ladder: EnergyLevels, H: float) -> int:
    j = math.floor(_log2_n(ladder.n) / (2.0 * H + 1.0))
    return min(max(j, ladder.min_scale), ladder.available)


def _invert_eta(energy_value: float, j: int, H: float, kappa: float, span: float,
                config: EstimatorConfig) -> tuple[float, list[str]]:
    radicand = energy_value * 2.0 ** (2.0 * j * H) / (span * kappa)
    if radicand < 0.0:
        logger.warning("negative eta radicand %.4g at level %d", radicand, j)
        return config.eta_minus, [EstimateFlag.NEGATIVE_RADICAND.value]
    raw = math.sqrt(radicand)
    eta = config.clamp_eta(raw)
    return eta, [EstimateFlag.CLAMPED_ETA.value] if eta != raw else []


def _result(ladder: EnergyLevels, trajectory: list[IterationSnapshot], flags: list[str],
            m_opt: int) -> EstimateResult:
    last = trajectory[-1]
    unique = list(dict.fromkeys(flags))
    return EstimateResult(H_hat=last.H, eta_hat=last.eta, J_star=last.J, m_opt=m_opt,
                          trajectory=trajectory, flags=unique, ladder=ladder)


# ============== Piecewise model ==============

def estimate_eta_piecewise(Q: EnergyLevels, H: float, config: EstimatorConfig) -> tuple[float, list[str]]:
    """Experimental eta estimate at level floor(log2 n / (2H + 1)) on the delta-grid.

    Uses E[Q_{j,p}] = kappa_p(H) eta^2 2^(-2jH-1).
    """
    j = _eta_scale(Q, H)
    p = Q.available - j
    return _invert_eta(Q[(j, p)], j, H, kappa_p(H, p), 0.5, config)


def estimate_H_piecewise(Q: EnergyLevels, config: EstimatorConfig) -> EstimateResult:
    """H = -1/2 log2(Q(J*+1, p) / Q(J*, p)) with p = N_vol - J* - 1, clamped."""
    if Q.model_kind != "piecewise":
        raise EstimationError("piecewise estimator needs a piecewise energy ladder")
    selection = select_level_piecewise(Q, config.threshold, Q.n)
    flags = [EstimateFlag.DEGENERATE_SELECTION.value] if selection.degenerate else []
    H, ratio_flags = _ratio_estimate(Q, selection.level, config, _raw(Q))
    flags += ratio_flags

    eta = None
    if config.experimental_eta:
        eta, eta_flags = estimate_eta_piecewise(Q, H, config)
        flags += eta_flags
    snapshot = IterationSnapshot(m=0, H=H, eta=eta, J=selection.level)
    return _result(Q, [snapshot], flags, m_opt=0)


# ============== General model ==============

def estimate_H0_general(Q: EnergyLevels, config: EstimatorConfig) -> EstimateResult:
    """First-stage H with threshold constant 1."""
    if Q.model_kind != "general":
        raise EstimationError("general estimator needs a general energy ladder")
    selection = select_level(Q, 1.0, Q.n)
    flags = [EstimateFlag.DEGENERATE_SELECTION.value] if selection.degenerate else []
    H, ratio_flags = _ratio_estimate(Q, selection.level, config, _raw(Q))
    snapshot = IterationSnapshot(m=0, H=H, J=selection.level)
    return _result(Q, [snapshot], flags + ratio_flags, m_opt=0)


def _corrected(ladder: EnergyLevels, S: int, I: float, nu: float, table: KappaTable) -> Energy:
    def energy(j: int, p: int) -> float:
        return ladder[(j, p)] - ENERGY_SPAN * bias_term(j, p, S, I, nu, table)
    return energy


def _eta_general(Q: EnergyLevels, H: float, table: KappaTable, config: EstimatorConfig,
                 energy: Energy) -> tuple[float, list[str]]:
    j = _eta_scale(Q, H)
    p = Q.available - j
    return _invert_eta(energy(j, p), j, H, table.kappa(H, p, 1), ENERGY_SPAN, config)


def estimate_eta0_general(Q: EnergyLevels, H0: float, table: KappaTable, config: EstimatorConfig) -> float:
    """First-stage eta at the adaptive level floor(log2 n / (2 H0 + 1))."""
    eta, _ = _eta_general(Q, H0, table, config, _raw(Q))
    return eta


def refine(Q: EnergyLevels, prev: tuple[float, float], table: KappaTable,
           config: EstimatorConfig) -> RefineStep:
    """One bias-correction pass from the previous (H, eta).

    The ladder is debiased with B^(S)(prev), J is re-selected, H is
    re-estimated, and eta is recomputed with the new H and the previous eta.
    """
    I, nu = prev
    if not (config.h_minus <= I <= config.h_plus and config.eta_minus <= nu <= config.eta_plus):
        raise DomainError(f"previous estimate {prev} outside the parameter bounds")
    S = config.order

    energy = _corrected(Q, S, I, nu, table)
    selection = select_level(Q, 1.0, Q.n, energy)
    flags = [EstimateFlag.DEGENERATE_SELECTION.value] if selection.degenerate else []
    H, ratio_flags = _ratio_estimate(Q, selection.level, config, energy)

    eta, eta_flags = _eta_general(Q, H, table, config, _corrected(Q, S, H, nu, table))
    return RefineStep(H=H, eta=eta, J=selection.level, flags=tuple(flags + ratio_flags + eta_flags))


def iterate(source: Union[PriceSeries, LogRVSeries, EnergyLevels], config: EstimatorConfig,
            table: Optional[KappaTable] = None) -> EstimateResult:
    """First stage plus m_opt refinement passes, with the whole trajectory.

    Piecewise inputs go through estimate_H_piecewise, which has no refinement.
    """
    ladder = source if isinstance(source, EnergyLevels) else empirical_ladder(source)
    if ladder.model_kind == "piecewise":
        return estimate_H_piecewise(ladder, config)
    if table is None:
        raise EstimationError("general-model estimation needs a kappa table")

    first = estimate_H0_general(ladder, config)
    H, J = first.H_hat, first.J_star
    eta, eta_flags = _eta_general(ladder, H, table, config, _raw(ladder))
    flags = first.flags + eta_flags
    trajectory = [IterationSnapshot(m=0, H=H, eta=eta, J=J)]

    m_opt = config.iterations
    for m in range(1, m_opt + 1):
        step = refine(ladder, (H, eta), table, config)
        H, eta = step.H, step.eta
        flags += list(step.flags)
        trajectory.append(IterationSnapshot(m=m, H=H, eta=eta, J=step.J))
        logger.debug("pass %d: H=%.6f eta=%.6f J=%d", m, H, eta, step.J)
    return _result(ladder, trajectory, flags, m_opt=m_opt)


def estimate(prices: PriceSeries, config: EstimatorConfig, table: Optional[KappaTable] = None) -> EstimateResult:
    """Full pipeline from observed prices."""
    return iterate(prices, config, table)


def achievable_rate(H: float, n: int, delta: Optional[float] = None) -> float:
    """n^(-1/(4H+2)), or its maximum with delta^(1/2) when blocks have length delta."""
    rate = n ** (-1.0 / (4.0 * H + 2.0))
    return max(rate, math.sqrt(delta)) if delta is not None else rate
