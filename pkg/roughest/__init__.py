"""Adaptive estimation of the Hurst exponent and vol-of-vol of rough volatility."""
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    KappaCoverageError,
    OutputError,
    QuadratureError,
    RateFitError,
    RoughestError,
    SimulationInfeasibleError,
)
from .estimators import EstimatorConfig, estimate, iterate, refine
from .fbm import FbmPath, sample_fbm, sample_fbm_paths
from .kappa import bias_term, choose_S, isserlis, kappa_p, kappa_pa
from .kappa_table import KappaTable, build_kappa_table, load_or_build
from .market import ModelParams, PriceSeries, log_realized_variance, simulate_general, simulate_piecewise
from .results import EstimateFlag, EstimateResult
from .wavelets import EnergyLevels, empirical_ladder, true_ladder

__version__ = "0.1.0"
