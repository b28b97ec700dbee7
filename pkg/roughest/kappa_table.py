"""Tabulated kappa_{p,a}(H) with a versioned JSON cache.

Entries with a = 1 come from the closed form. Entries with a >= 2 are
computed by quadrature up to depth p_exact and continued beyond it with
the decay kappa_{p,a} ~ 2^(-(2a-1)Hp). Lookups between grid nodes use a
cubic through the four nearest nodes in H.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from tqdm import tqdm

from .errors import ConfigError, KappaCoverageError
from .kappa import DEFAULT_QUAD_NODES, DEFAULT_TOL, MAX_ISSERLIS_DIM, kappa_first_order, kappa_pa

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2
DEFAULT_H_STEP = 0.005
DEFAULT_P_EXACT = 4
# nodes within this distance of a query are returned without interpolation
_NODE_SNAP = 1e-12


def hurst_grid(h_minus: float, h_plus: float, step: float = DEFAULT_H_STEP) -> tuple[float, ...]:
    """Evenly spaced grid covering [h_minus, h_plus] with spacing at most step."""
    if not 0.0 < h_minus < h_plus < 1.0 or step <= 0:
        raise ConfigError(f"invalid H grid ({h_minus}, {h_plus}, step={step})")
    intervals = max(1, math.ceil((h_plus - h_minus) / step - 1e-9))
    return tuple(round(float(h), 12) for h in np.linspace(h_minus, h_plus, intervals + 1))


@dataclass(frozen=True)
class KappaTable:
    """kappa_{p,a}(H) on H_grid x p_values x {1..S}."""
    h_grid: tuple[float, ...]
    p_values: tuple[int, ...]
    S: int
    quad_nodes: int
    p_exact: int
    values: dict = field(repr=False)
    tol: float = DEFAULT_TOL

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "h_grid": list(self.h_grid),
            "p_values": list(self.p_values),
            "S": self.S,
            "quad_nodes": self.quad_nodes,
            "p_exact": self.p_exact,
            "tol": self.tol,
        }

    def extrapolated(self, p: int) -> bool:
        """Whether the a >= 2 entries at depth p come from the decay law."""
        return p > self.p_exact

    def covers(self, H: float, p: int, a: int) -> bool:
        return (1 <= a <= self.S and p in self.p_values
                and self.h_grid[0] - _NODE_SNAP <= H <= self.h_grid[-1] + _NODE_SNAP)

    def kappa(self, H: float, p: int, a: int) -> float:
        """Interpolated kappa_{p,a}(H)."""
        if not self.covers(H, p, a):
            raise KappaCoverageError(
                f"(H={H}, p={p}, a={a}) outside table H in [{self.h_grid[0]}, {self.h_grid[-1]}], "
                f"p in {list(self.p_values)}, a <= {self.S}"
            )
        grid = np.asarray(self.h_grid)
        nearest = int(np.argmin(np.abs(grid - H)))
        if abs(grid[nearest] - H) <= _NODE_SNAP:
            return self.values[(self.h_grid[nearest], p, a)]
        if len(grid) == 1:
            return self.values[(self.h_grid[0], p, a)]

        width = min(4, len(grid))
        right = int(np.searchsorted(grid, H))
        start = min(max(right - width // 2, 0), len(grid) - width)
        xs = grid[start : start + width]
        ys = [self.values[(float(h), p, a)] for h in xs]
        if width == 2:
            return float(np.interp(H, xs, ys))
        return float(CubicSpline(xs, ys)(H))

    # ============== Persistence ==============

    def to_json(self) -> dict:
        flat = [self.values[(h, p, a)]
                for h in self.h_grid for p in self.p_values for a in range(1, self.S + 1)]
        return {**self.header(), "values": flat}

    @classmethod
    def from_json(cls, data: dict) -> "KappaTable":
        if data.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported kappa cache version {data.get('format_version')!r}")
        h_grid = tuple(float(h) for h in data["h_grid"])
        p_values = tuple(int(p) for p in data["p_values"])
        S = int(data["S"])
        keys = [(h, p, a) for h in h_grid for p in p_values for a in range(1, S + 1)]
        if len(keys) != len(data["values"]):
            raise ConfigError("kappa cache value array does not match its header")
        return cls(h_grid=h_grid, p_values=p_values, S=S, quad_nodes=int(data["quad_nodes"]),
                   p_exact=int(data["p_exact"]), tol=float(data["tol"]),
                   values=dict(zip(keys, map(float, data["values"]))))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json()))
        return path

    @classmethod
    def load(cls, path: Path) -> "KappaTable":
        return cls.from_json(json.loads(Path(path).read_text()))


def _quadrature_task(args: tuple) -> tuple[tuple[float, int, int], float]:
    H, p, a, S, quad_nodes, tol = args
    return (H, p, a), kappa_pa(H, p, a, S, quad_nodes=quad_nodes, tol=tol)


def build_kappa_table(h_grid: Sequence[float], p_values: Iterable[int], S: int,
                      quad_nodes: int = DEFAULT_QUAD_NODES, p_exact: int = DEFAULT_P_EXACT,
                      tol: float = DEFAULT_TOL, workers: int = 1,
                      progress: bool = False) -> KappaTable:
    """Compute a KappaTable, in parallel over (H, p, a) when workers > 1.

    Args:
        h_grid: Sorted H nodes.
        p_values: Depths to tabulate.
        S: Highest order a.
        quad_nodes: Quadrature nodes per dimension for a >= 2.
        p_exact: Deepest p computed by quadrature; deeper entries use the decay law.
        tol: Node-doubling tolerance every a >= 2 entry must meet.
        workers: Process count.
        progress: Show a tqdm bar.
    """
    h_grid = tuple(float(h) for h in h_grid)
    p_values = tuple(sorted(set(int(p) for p in p_values)))
    if not h_grid or list(h_grid) != sorted(h_grid):
        raise ConfigError("H grid must be non-empty and sorted")
    if not p_values or p_values[0] < 0:
        raise ConfigError(f"invalid depths {p_values}")
    if S < 1:
        raise ConfigError(f"S must be >= 1, got {S}")
    if 2 * S > MAX_ISSERLIS_DIM:
        raise ConfigError(f"S={S} is beyond the quadrature; H_- must be large enough that S <= {MAX_ISSERLIS_DIM // 2}")
    if not tol > 0:
        raise ConfigError(f"quadrature tolerance must be positive, got {tol}")

    values = {(h, p, 1): kappa_first_order(h, p) for h in h_grid for p in p_values}

    exact_depths = sorted({p for p in p_values if p <= p_exact}
                          | ({p_exact} if p_values[-1] > p_exact else set()))
    tasks = [(h, p, a, S, quad_nodes, tol) for h in h_grid for p in exact_depths for a in range(2, S + 1)]
    logger.info("building kappa table: %d H nodes, %d depths, S=%d, %d quadratures",
                len(h_grid), len(p_values), S, len(tasks))

    computed = {}
    bar = tqdm(total=len(tasks), desc="kappa", disable=not progress)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, value in pool.map(_quadrature_task, tasks):
                computed[key] = value
                bar.update()
    else:
        for task in tasks:
            key, value = _quadrature_task(task)
            computed[key] = value
            bar.update()
    bar.close()

    for h in h_grid:
        for p in p_values:
            for a in range(2, S + 1):
                if p <= p_exact:
                    values[(h, p, a)] = computed[(h, p, a)]
                else:
                    decay = 2.0 ** (-(2 * a - 1) * h * (p - p_exact))
                    values[(h, p, a)] = computed[(h, p_exact, a)] * decay
    return KappaTable(h_grid=h_grid, p_values=p_values, S=S, quad_nodes=quad_nodes,
                      p_exact=p_exact, values=values, tol=tol)


def load_or_build(path: Optional[Path], h_grid: Sequence[float], p_values: Iterable[int], S: int,
                  quad_nodes: int = DEFAULT_QUAD_NODES, p_exact: int = DEFAULT_P_EXACT,
                  tol: float = DEFAULT_TOL, workers: int = 1, force: bool = False,
                  progress: bool = False) -> KappaTable:
    """Reuse the cached table at path when its key matches, otherwise rebuild and save."""
    wanted = {
        "format_version": FORMAT_VERSION,
        "h_grid": [float(h) for h in h_grid],
        "p_values": sorted(set(int(p) for p in p_values)),
        "S": S,
        "quad_nodes": quad_nodes,
        "p_exact": p_exact,
        "tol": tol,
    }
    if path is not None and Path(path).exists() and not force:
        try:
            table = KappaTable.load(path)
        except (ConfigError, ValueError, KeyError) as e:
            logger.warning("ignoring unreadable kappa cache %s: %s", path, e)
        else:
            if table.header() == wanted:
                logger.info("kappa cache hit: %s", path)
                return table
            logger.info("kappa cache %s keyed differently, rebuilding", path)

    table = build_kappa_table(h_grid, p_values, S, quad_nodes=quad_nodes, p_exact=p_exact,
                              tol=tol, workers=workers, progress=progress)
    if path is not None:
        table.save(path)
        logger.info("kappa cache written: %s", path)
    return table
