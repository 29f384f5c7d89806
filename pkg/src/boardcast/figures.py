"""Figure rendering for the report path.

The evaluate and features commands drop PNGs next to their CSV outputs:
metric-by-horizon panels for the leaderboard, extreme-level error curves,
and the boarding-time trend over the corpus.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

from .evaluation import ExtremeReport, Leaderboard
from .features import TARGET_COLUMN

_METRIC_PANELS = [("mae", "MAE (min)"), ("rmse", "RMSE (min)"), ("r2", "R²"), ("mape", "MAPE (%)")]


def render_leaderboard_figure(board: Leaderboard, path: Path | str) -> None:
    """2x2 grid of metric-vs-horizon curves, one line per algorithm."""
    horizons = board.horizons()
    algorithms = board.algorithms()
    by_key = {(r.algorithm, r.horizon): r.metrics for r in board.rows}

    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for ax, (metric, label) in zip(axes.flat, _METRIC_PANELS):
        for algorithm in algorithms:
            ys = []
            for h in horizons:
                report = by_key.get((algorithm, h))
                value = getattr(report, metric) if report else None
                ys.append(float("nan") if value is None else value)
            ax.plot(horizons, ys, marker="o", label=algorithm)
        ax.set_ylabel(label)
        ax.set_xticks(horizons)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("forecast horizon (hours)")
    axes[0][0].legend(fontsize=8)
    fig.suptitle("Forecast performance by horizon")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_extreme_figure(
    reports: list[tuple[str, int, ExtremeReport]], path: Path | str
) -> None:
    """MAE under increasingly extreme observed boarding levels, per algorithm."""
    horizons = sorted({h for _, h, _ in reports})
    algorithms = sorted({a for a, _, _ in reports})
    by_key = {(a, h): rep for a, h, rep in reports}

    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharey=True)
    for level_idx, ax in enumerate(axes):
        for algorithm in algorithms:
            ys = []
            for h in horizons:
                rep = by_key.get((algorithm, h))
                mae = rep.levels[level_idx].mae if rep else None
                ys.append(float("nan") if mae is None else mae)
            ax.plot(horizons, ys, marker="o", label=algorithm)
        ax.set_title(f"level {level_idx + 1} (mean + {level_idx + 1}·sd)")
        ax.set_xlabel("horizon (h)")
        ax.set_xticks(horizons)
        ax.grid(True, alpha=0.3)
    axes[0].set_ylabel("MAE (min)")
    axes[0].legend(fontsize=8)
    fig.suptitle("Error on extreme boarding hours")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_boarding_trend(table: pd.DataFrame, path: Path | str) -> None:
    """Hourly boarding time over the corpus with its mean +- sd band."""
    ts = table["hour_ts"]
    values = table[TARGET_COLUMN]
    mean = float(values.mean())
    sd = float(values.std())

    fig, ax = plt.subplots(figsize=(11, 4))
    ax.plot(ts, values, linewidth=0.5, color="#4c72b0")
    ax.axhline(mean, color="#444", linestyle="--", linewidth=1, label=f"mean {mean:.0f} min")
    ax.axhline(mean + sd, color="#c44e52", linestyle=":", linewidth=1,
               label=f"mean + sd {mean + sd:.0f} min")
    ax.set_ylabel("boarding time (min)")
    ax.set_xlabel("hour")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.suptitle("Hourly boarding time")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
