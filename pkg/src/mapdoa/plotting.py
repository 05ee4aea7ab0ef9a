"""Figures for result tables (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import ResultTable, aggregate  # noqa: E402

LABELS = {
    "rmse": "RMSE (rad)",
    "mean_time_s": "mean time per trial (s)",
    "mean_gap": "mean optimality gap",
}
AXIS_LABELS = {"snr_db": "SNR (dB)", "snapshots": "snapshots N"}


def plot_column(table: ResultTable, column: str, path) -> Path:
    """One line per method of ``column`` against the sweep axis."""
    values, methods, arr = aggregate(table, column)
    axis = table.rows[0].axis if table.rows else "snr_db"
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for j, name in enumerate(methods):
        ax.plot(values, arr[:, j], marker="o", ms=4, label=name)
    if column != "mean_gap":
        ax.set_yscale("log")
    if axis == "snapshots":
        ax.set_xscale("log")
    ax.set_xlabel(AXIS_LABELS.get(axis, axis))
    ax.set_ylabel(LABELS.get(column, column))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
