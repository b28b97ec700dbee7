"""Runtime settings and experiment manifests.

Settings are the per-user defaults (kappa cache location, worker count,
log level) kept in ~/.config/roughest/settings.json and overridable from
the environment. Experiments are declared in TOML manifests.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .estimators import EstimatorConfig
from .kappa import DEFAULT_QUAD_NODES, DEFAULT_TOL, MAX_ISSERLIS_DIM
from .kappa_table import DEFAULT_H_STEP, DEFAULT_P_EXACT
from .market import GENERAL_H_LIMIT

logger = logging.getLogger(__name__)

CONFIG_DIR = Path.home() / ".config" / "roughest"
CONFIG_FILE = CONFIG_DIR / "settings.json"
DEFAULT_KAPPA_CACHE = CONFIG_DIR / "kappa_cache.json"

# Largest observation exponent an experiment may request.
MAX_EXPONENT = 24


@dataclass
class Settings:
    """Per-user runtime defaults."""
    kappa_cache: str = str(DEFAULT_KAPPA_CACHE)
    threads: int = 1
    log_level: str = "INFO"

    @property
    def kappa_cache_path(self) -> Path:
        return Path(self.kappa_cache).expanduser()


def _env_overrides(settings: Settings) -> Settings:
    cache = os.getenv("ROUGHEST_KAPPA_CACHE")
    threads = os.getenv("ROUGHEST_THREADS")
    level = os.getenv("ROUGHEST_LOG_LEVEL")
    if cache and cache.strip():
        settings.kappa_cache = cache.strip()
    if threads and threads.strip():
        try:
            settings.threads = int(threads)
        except ValueError:
            logger.warning("ignoring non-integer ROUGHEST_THREADS=%r", threads)
    if level and level.strip():
        settings.log_level = level.strip().upper()
    return settings


def load_settings() -> Settings:
    """Load settings from file (if any), then apply environment overrides."""
    settings = Settings()
    if CONFIG_FILE.exists():
        try:
            data = json.loads(CONFIG_FILE.read_text())
            known = {f.name for f in fields(Settings)}
            settings = Settings(**{k: v for k, v in data.items() if k in known})
        except (OSError, ValueError, TypeError) as e:
            logger.warning("failed to load settings from %s: %s", CONFIG_FILE, e)
    return _env_overrides(settings)


def save_settings(settings: Settings) -> Path:
    CONFIG_FILE.parent.mkdir(parents=True, exist_ok=True)
    CONFIG_FILE.write_text(json.dumps(asdict(settings), indent=2))
    return CONFIG_FILE


# Singleton settings instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = load_settings()
    return _settings


def update_settings(**kwargs) -> Settings:
    """Update settings and save."""
    global _settings
    settings = get_settings()
    for key, value in kwargs.items():
        if not hasattr(settings, key):
            raise ConfigError(f"unknown setting {key!r}")
        setattr(settings, key, value)
    save_settings(settings)
    _settings = settings
    return settings


# ============== Experiment manifests ==============

@dataclass(frozen=True)
class KappaSettings:
    """How the kappa table for an experiment is built."""
    h_step: float = DEFAULT_H_STEP
    quad_nodes: int = DEFAULT_QUAD_NODES
    p_exact: int = DEFAULT_P_EXACT
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.h_step <= 0 or self.quad_nodes < 1 or self.p_exact < 0 or not self.tol > 0:
            raise ConfigError(f"invalid kappa settings {self}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A Monte Carlo grid over (H, eta) x N x replications."""
    model: str
    H: tuple[float, ...]
    eta: tuple[float, ...]
    N: tuple[int, ...]
    replications: int
    base_seed: int = 0
    N_vol: Optional[int] = None
    oversample: int = 8
    output_dir: str = "results"
    kappa_cache: Optional[str] = None
    threads: int = 1
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    kappa: KappaSettings = field(default_factory=KappaSettings)

    def __post_init__(self):
        if self.model not in ("piecewise", "general"):
            raise ConfigError(f"model must be 'piecewise' or 'general', got {self.model!r}")
        if not self.H or not self.eta or not self.N:
            raise ConfigError("H, eta and N grids must be non-empty")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if list(self.N) != sorted(set(self.N)):
            raise ConfigError(f"N list must be strictly ascending, got {list(self.N)}")
        if self.N[0] < 2 or self.N[-1] > MAX_EXPONENT:
            raise ConfigError(f"N values must lie in [2, {MAX_EXPONENT}], got {list(self.N)}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        est = self.estimator
        for h in self.H:
            if not est.h_minus <= h <= est.h_plus:
                raise ConfigError(f"H={h} outside estimator bounds [{est.h_minus}, {est.h_plus}]")
        for eta in self.eta:
            if not est.eta_minus <= eta <= est.eta_plus:
                raise ConfigError(f"eta={eta} outside estimator bounds [{est.eta_minus}, {est.eta_plus}]")
        if self.model == "piecewise":
            if self.N_vol is None or not 3 <= self.N_vol <= self.N[0]:
                raise ConfigError(f"piecewise model needs 3 <= N_vol <= min(N), got {self.N_vol}")
        else:
            if est.h_plus >= GENERAL_H_LIMIT:
                raise ConfigError(f"general model needs H_+ < {GENERAL_H_LIMIT}, got {est.h_plus}")
            if 2 * est.order > MAX_ISSERLIS_DIM:
                raise ConfigError(
                    f"general model needs S <= {MAX_ISSERLIS_DIM // 2}, H_-={est.h_minus} gives S={est.order}"
                )
            if self.oversample < 1 or self.oversample & (self.oversample - 1):
                raise ConfigError(f"oversample must be a power of two, got {self.oversample}")
            if self.N[-1] + self.oversample.bit_length() - 1 > MAX_EXPONENT:
                raise ConfigError("oversampled grid too large for exact simulation")

    @property
    def cells(self) -> list[tuple[float, float, int]]:
        return [(h, eta, N) for h in self.H for eta in self.eta for N in self.N]

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with the non-None overrides applied (CLI flags)."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _as_tuple(value, cast) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return (cast(value),)


def parse_experiment(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed manifest."""
    data = dict(data)
    try:
        model = str(data.pop("model"))
        estimator = replace(EstimatorConfig.for_model(model), **data.pop("estimator", {}))
        kappa = KappaSettings(**data.pop("kappa", {}))
        return ExperimentConfig(
            model=model,
            H=_as_tuple(data.pop("H"), float),
            eta=_as_tuple(data.pop("eta"), float),
            N=_as_tuple(data.pop("N"), int),
            replications=int(data.pop("replications")),
            estimator=estimator,
            kappa=kappa,
            **data,
        )
    except KeyError as e:
        raise ConfigError(f"experiment manifest is missing key {e.args[0]!r}") from None
    except TypeError as e:
        raise ConfigError(f"invalid experiment manifest: {e}") from None


def load_experiment(path: Path) -> ExperimentConfig:
    """Read a TOML experiment manifest."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_experiment(data)
