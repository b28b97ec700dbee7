"""RMSE-vs-sample-size plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import DomainError, OutputError


def series_id(model: str, H: float, eta: float) -> str:
    return f"{model}-H{H:g}-eta{eta:g}"


def plot_rmse_vs_n(aggregates: pd.DataFrame, path: Path, quantity: str = "H") -> Path:
    """RMSE of H_hat (or eta_hat) against N on a log2 axis, one series per cell.

    Each series gets a dashed reference line of slope -1/(4H+2) through its
    first point. Series and references carry SVG ids "series-..." and
    "reference-...".
    """
    if aggregates.empty:
        raise DomainError("nothing to plot")
    column = f"rmse_{quantity}"
    fig, ax = plt.subplots(figsize=(7, 5))
    for (model, H, eta), group in aggregates.groupby(["model", "H", "eta"], sort=True):
        group = group.sort_values("N")
        N = group["N"].to_numpy(dtype=float)
        rmse = group[column].to_numpy(dtype=float)
        name = series_id(model, H, eta)
        (line,) = ax.plot(N, rmse, marker="o", label=f"{model} H={H:g} eta={eta:g}", gid=f"series-{name}")
        if np.isfinite(rmse[0]) and rmse[0] > 0:
            reference = rmse[0] * 2.0 ** (-(N - N[0]) / (4.0 * H + 2.0))
            ax.plot(N, reference, linestyle="--", color=line.get_color(), alpha=0.6,
                    gid=f"reference-{name}")

    ax.set_yscale("log", base=2)
    ax.set_xlabel("N (n = 2^N)")
    ax.set_ylabel(f"RMSE of {quantity}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()

    path = Path(path)
    try:
        fig.savefig(path, format="svg")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    return path
