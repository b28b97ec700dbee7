"""Monte Carlo experiments: simulate, estimate, aggregate, fit rates, emit.

Every (cell, replication) task is pure given its seed base_seed + rep, so
tasks run in any order and in any process; rows are merged by sorting on
(model, H, eta, N, rep).
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from .config import ExperimentConfig, get_settings
from .errors import ConfigError, DomainError, OutputError, RateFitError
from .estimators import estimate
from .kappa_table import KappaTable, hurst_grid, load_or_build
from .market import ModelParams, simulate_general, simulate_piecewise

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["model", "H", "eta", "N", "rep", "H_hat", "eta_hat", "J_star", "flags", "wall_ms"]
CELL_KEY = ["model", "H", "eta", "N"]
SORT_KEY = CELL_KEY + ["rep"]

RESULTS_FILE = "results.csv"
PARTIAL_FILE = "results.partial.csv"
AGGREGATES_FILE = "aggregates.csv"
PLOT_FILE = "rmse_vs_n.svg"


class RateFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    # coefficient of log2 log n when that covariate is fitted
    log_coefficient: Optional[float] = None


@dataclass
class ExperimentResults:
    """Per-replication rows plus the derived per-cell summaries."""
    rows: pd.DataFrame

    @property
    def aggregates(self) -> pd.DataFrame:
        return aggregate(self.rows)

    @property
    def rate_fits(self) -> pd.DataFrame:
        return fit_rates(self.aggregates)

    def __len__(self) -> int:
        return len(self.rows)


def theoretical_slope(H: float) -> float:
    """Slope of log2 RMSE in N for the rate n^(-1/(4H+2))."""
    return -1.0 / (4.0 * H + 2.0)


# ============== Running ==============

def _run_task(task: tuple) -> dict:
    model, H, eta, N, rep, seed, N_vol, oversample, estimator, table = task
    params = ModelParams(H=H, eta=eta, h_minus=estimator.h_minus, h_plus=estimator.h_plus,
                         eta_minus=estimator.eta_minus, eta_plus=estimator.eta_plus)
    start = time.perf_counter()
    if model == "piecewise":
        prices = simulate_piecewise(params, N, N_vol, seed)
    else:
        prices = simulate_general(params, N, oversample, seed)
    result = estimate(prices, estimator, table)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return {
        "model": model, "H": H, "eta": eta, "N": N, "rep": rep,
        "H_hat": result.H_hat,
        "eta_hat": result.eta_hat if result.eta_hat is not None else math.nan,
        "J_star": result.J_star,
        "flags": "|".join(result.flags),
        "wall_ms": wall_ms,
    }


def _check_output_dir(out_dir: Path) -> None:
    marker = out_dir / ".write-check"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker.write_text("")
        marker.unlink()
    except OSError as e:
        raise ConfigError(f"output directory {out_dir} is not writable: {e}") from None


def experiment_table(config: ExperimentConfig, progress: bool = False, force: bool = False) -> Optional[KappaTable]:
    """Load or build the kappa table a general-model experiment needs."""
    if config.model != "general":
        return None
    est, kap = config.estimator, config.kappa
    cache = config.kappa_cache or get_settings().kappa_cache
    return load_or_build(
        Path(cache).expanduser() if cache else None,
        hurst_grid(est.h_minus, est.h_plus, kap.h_step),
        range(0, max(config.N)),
        est.order,
        quad_nodes=kap.quad_nodes, p_exact=kap.p_exact, tol=kap.tol,
        workers=config.threads, force=force, progress=progress,
    )


def _tasks(config: ExperimentConfig, table: Optional[KappaTable]) -> list[tuple]:
    return [
        (config.model, H, eta, N, rep, config.base_seed + rep, config.N_vol, config.oversample,
         config.estimator, table)
        for H, eta, N in config.cells
        for rep in range(config.replications)
    ]


def _frame(records: Iterable[dict]) -> pd.DataFrame:
    frame = pd.DataFrame(list(records), columns=RESULT_COLUMNS)
    frame = frame.astype({"N": "int64", "rep": "int64", "J_star": "int64",
                          "H": "float64", "eta": "float64", "H_hat": "float64",
                          "eta_hat": "float64", "wall_ms": "float64"})
    return frame.sort_values(SORT_KEY, kind="mergesort").reset_index(drop=True)


def run(config: ExperimentConfig, progress: bool = False,
        table: Optional[KappaTable] = None) -> ExperimentResults:
    """Execute every (cell, replication) task of an experiment.

    Rows are appended to results.partial.csv as tasks finish; on completion
    the sorted rows replace it as results.csv.

    Args:
        config: Validated experiment.
        progress: Show tqdm bars.
        table: Precomputed kappa table; built or loaded from the cache when
            omitted and the model is general.
    """
    out_dir = Path(config.output_dir)
    _check_output_dir(out_dir)
    if config.model == "general" and table is None:
        table = experiment_table(config, progress=progress)

    tasks = _tasks(config, table)
    logger.info("running %d tasks (%d cells x %d replications) on %d worker(s)",
                len(tasks), len(config.cells), config.replications, config.threads)

    partial = out_dir / PARTIAL_FILE
    pd.DataFrame(columns=RESULT_COLUMNS).to_csv(partial, index=False, lineterminator="\n")
    records = []

    def flush(row: dict) -> None:
        records.append(row)
        pd.DataFrame([row], columns=RESULT_COLUMNS).to_csv(
            partial, mode="a", header=False, index=False, float_format="%.17g", lineterminator="\n")

    bar = tqdm(total=len(tasks), desc="experiment", disable=not progress)
    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(_run_task, task) for task in tasks]
            for future in as_completed(futures):
                flush(future.result())
                bar.update()
    else:
        for task in tasks:
            flush(_run_task(task))
            bar.update()
    bar.close()

    results = ExperimentResults(rows=_frame(records))
    _write_rows(results.rows, out_dir / RESULTS_FILE)
    partial.unlink(missing_ok=True)
    logger.info("experiment finished: %d rows in %s", len(results), out_dir)
    return results


# ============== Summaries ==============

def aggregate(rows: pd.DataFrame) -> pd.DataFrame:
    """Per-cell count, bias, RMSE and median absolute error of H_hat and eta_hat."""
    columns = CELL_KEY + ["count", "bias_H", "rmse_H", "mae_H", "bias_eta", "rmse_eta", "mae_eta"]
    if rows.empty:
        return pd.DataFrame(columns=columns)
    ordered = rows.sort_values(SORT_KEY, kind="mergesort")
    summaries = []
    for key, group in ordered.groupby(CELL_KEY, sort=True):
        err_H = (group["H_hat"] - group["H"]).to_numpy()
        err_eta = (group["eta_hat"] - group["eta"]).to_numpy()
        summaries.append(dict(
            zip(CELL_KEY, key),
            count=len(group),
            bias_H=float(np.mean(err_H)),
            rmse_H=float(np.sqrt(np.mean(err_H**2))),
            mae_H=float(np.median(np.abs(err_H))),
            bias_eta=float(np.mean(err_eta)),
            rmse_eta=float(np.sqrt(np.mean(err_eta**2))),
            mae_eta=float(np.median(np.abs(err_eta))),
        ))
    return pd.DataFrame(summaries, columns=columns)


def fit_rate(aggregates: pd.DataFrame, quantity: str = "H", log_correction: bool = False) -> RateFit:
    """Least-squares slope of log2 RMSE against N for a single cell.

    With log_correction log2(ln n) enters the design as a second covariate,
    absorbing the logarithmic factor of the eta rate whatever its power.
    """
    if quantity not in ("H", "eta"):
        raise DomainError(f"quantity must be 'H' or 'eta', got {quantity!r}")
    if aggregates.empty:
        raise RateFitError("no aggregates to fit")
    if len(aggregates.groupby(["model", "H", "eta"])) != 1:
        raise RateFitError("fit_rate expects the aggregates of a single (model, H, eta) cell")

    frame = aggregates.sort_values("N")
    N = frame["N"].to_numpy(dtype=float)
    rmse = frame[f"rmse_{quantity}"].to_numpy(dtype=float)
    if len(np.unique(N)) < 3:
        raise RateFitError(f"need at least 3 distinct N values, got {len(np.unique(N))}")
    if not np.all(np.isfinite(rmse)) or np.any(rmse <= 0.0):
        raise RateFitError(f"RMSE of {quantity} must be positive and finite")
    y = np.log2(rmse)
    if np.ptp(y) == 0.0:
        raise RateFitError(f"RMSE of {quantity} is constant in N")
    if log_correction:
        return _fit_with_log_term(N, y)
    fit = stats.linregress(N, y)
    return RateFit(slope=float(fit.slope), stderr=float(fit.stderr), intercept=float(fit.intercept))


def _fit_with_log_term(N: np.ndarray, y: np.ndarray) -> RateFit:
    if len(np.unique(N)) < 4:
        raise RateFitError(f"the log log n covariate needs at least 4 distinct N values, got {len(np.unique(N))}")
    design = np.column_stack([np.ones_like(N), N, np.log2(N * math.log(2.0))])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    dof = len(y) - design.shape[1]
    residual = y - design @ coef
    scale = float(residual @ residual) / dof if dof > 0 else 0.0
    cov = scale * np.linalg.inv(design.T @ design)
    return RateFit(slope=float(coef[1]), stderr=float(math.sqrt(cov[1, 1])), intercept=float(coef[0]),
                   log_coefficient=float(coef[2]))


def fit_rates(aggregates: pd.DataFrame, quantity: str = "H", log_correction: bool = False) -> pd.DataFrame:
    """One rate fit per (model, H, eta); cells that cannot be fitted are skipped."""
    columns = ["model", "H", "eta", "slope", "stderr", "theoretical"]
    fits = []
    for (model, H, eta), group in aggregates.groupby(["model", "H", "eta"], sort=True):
        try:
            fit = fit_rate(group, quantity, log_correction)
        except RateFitError as e:
            logger.warning("no rate fit for %s H=%s eta=%s: %s", model, H, eta, e)
            continue
        fits.append(dict(model=model, H=H, eta=eta, slope=fit.slope, stderr=fit.stderr,
                         theoretical=theoretical_slope(H)))
    return pd.DataFrame(fits, columns=columns)


# ============== Files ==============

def _write_rows(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def emit(results: ExperimentResults, out_dir: Path,
         formats: Iterable[str] = ("csv", "svg")) -> list[Path]:
    """Write results.csv, aggregates.csv and, with "svg", the RMSE plot."""
    formats = set(formats)
    unknown = formats - {"csv", "svg"}
    if unknown:
        raise DomainError(f"unknown output formats {sorted(unknown)}")
    if results.rows.empty:
        raise DomainError("no results to emit")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create {out_dir}: {e}") from e

    written = []
    aggregates = results.aggregates
    if "csv" in formats:
        written.append(_write_rows(_frame(results.rows.to_dict("records")), out_dir / RESULTS_FILE))
        written.append(_write_rows(aggregates, out_dir / AGGREGATES_FILE))
    if "svg" in formats:
        from .plots import plot_rmse_vs_n
        written.append(plot_rmse_vs_n(aggregates, out_dir / PLOT_FILE))
    for path in written:
        logger.info("wrote %s", path)
    return written


def load_results(out_dir: Path) -> ExperimentResults:
    """Parse results.csv written by run or emit."""
    path = Path(out_dir) / RESULTS_FILE
    try:
        frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                            na_values={"eta_hat": [""]}, dtype={"model": str, "flags": str})
    except OSError as e:
        raise OutputError(f"cannot read {path}: {e}") from e
    if list(frame.columns) != RESULT_COLUMNS:
        raise DomainError(f"{path}: unexpected header {list(frame.columns)}")
    return ExperimentResults(rows=_frame(frame.to_dict("records")))
