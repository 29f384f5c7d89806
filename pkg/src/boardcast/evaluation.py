"""Regression metrics, extreme-episode slicing, and the multi-horizon leaderboard.

All metrics are computed in original units (minutes), after predictions have
been inverse-scaled. MAPE skips hours whose observed value is under one
minute (division by a near-zero boarding time is meaningless); the number of
skipped rows is reported. R-squared on a zero-variance target is undefined
and reported as None rather than a number.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateKeyError, ValidationError

MAPE_MIN_DENOMINATOR = 1.0  # minutes


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    r2: float | None
    mape: float | None
    n: int
    mape_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "r2": self.r2,
            "mape": self.mape,
            "n": self.n,
            "mape_excluded": self.mape_excluded,
        }


def compute_metrics(y: np.ndarray, yhat: np.ndarray) -> MetricReport:
    """MAE / RMSE / R2 / MAPE over paired vectors in minutes."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValidationError(f"y and yhat must be equal-length vectors, got {y.shape} vs {yhat.shape}")
    if len(y) < 1:
        raise ValidationError("metrics need at least one sample")

    err = y - yhat
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err * err)))

    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    included = np.abs(y) >= MAPE_MIN_DENOMINATOR
    n_excluded = int(np.count_nonzero(~included))
    if included.any():
        mape = float(100.0 * np.mean(np.abs(err[included]) / np.abs(y[included])))
    else:
        mape = None
    return MetricReport(mae=mae, rmse=rmse, r2=r2, mape=mape, n=len(y), mape_excluded=n_excluded)


def extreme_thresholds(mean: float, sd: float) -> tuple[float, float, float]:
    """(mean + sd, mean + 2*sd, mean + 3*sd)."""
    if sd < 0:
        raise ValidationError("sd must be >= 0")
    return (mean + sd, mean + 2.0 * sd, mean + 3.0 * sd)


@dataclass(frozen=True)
class ExtremeLevel:
    level: int
    threshold: float
    n_cases: int
    share: float  # percent of all rows
    mae: float | None

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "threshold": self.threshold,
            "n_cases": self.n_cases,
            "share": self.share,
            "mae": self.mae,
        }


@dataclass(frozen=True)
class ExtremeReport:
    levels: tuple[ExtremeLevel, ExtremeLevel, ExtremeLevel]

    def to_dict(self) -> dict:
        return {"levels": [lv.to_dict() for lv in self.levels]}


def slice_and_score(
    y: np.ndarray, yhat: np.ndarray, thresholds: tuple[float, float, float]
) -> ExtremeReport:
    """Per-level MAE over observations whose ground truth is >= each threshold."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 1:
        raise ValidationError("slice_and_score needs equal-length non-empty vectors")
    if not (thresholds[0] <= thresholds[1] <= thresholds[2]):
        raise ValidationError("thresholds must be non-decreasing")
    n = len(y)
    levels = []
    for k, t in enumerate(thresholds, start=1):
        mask = y >= t
        n_cases = int(np.count_nonzero(mask))
        mae = float(np.mean(np.abs(y[mask] - yhat[mask]))) if n_cases else None
        levels.append(
            ExtremeLevel(level=k, threshold=float(t), n_cases=n_cases,
                         share=100.0 * n_cases / n, mae=mae)
        )
    return ExtremeReport(levels=(levels[0], levels[1], levels[2]))


@dataclass(frozen=True)
class LeaderboardRow:
    algorithm: str
    horizon: int
    metrics: MetricReport
    best: bool = False


@dataclass
class Leaderboard:
    """(algorithm, horizon) metric grid with the per-horizon MAE winner marked."""

    rows: list[LeaderboardRow] = field(default_factory=list)

    def best_for(self, horizon: int) -> LeaderboardRow:
        candidates = [r for r in self.rows if r.horizon == horizon and r.best]
        if not candidates:
            raise ValidationError(f"no rows for horizon {horizon}")
        return candidates[0]

    def horizons(self) -> list[int]:
        return sorted({r.horizon for r in self.rows})

    def algorithms(self) -> list[str]:
        return sorted({r.algorithm for r in self.rows})


def leaderboard(results: list[tuple[str, int, MetricReport]]) -> Leaderboard:
    """Assemble the leaderboard, sorted by (horizon, MAE), winners marked."""
    if not results:
        raise ValidationError("leaderboard needs at least one result")
    seen = set()
    for algorithm, horizon, _ in results:
        key = (algorithm, horizon)
        if key in seen:
            raise DuplicateKeyError(f"duplicate leaderboard entry: {algorithm} @ h={horizon}")
        seen.add(key)

    ordered = sorted(results, key=lambda r: (r[1], r[2].mae, r[0]))
    best_mae: dict[int, float] = {}
    for _, horizon, metrics in ordered:
        if horizon not in best_mae or metrics.mae < best_mae[horizon]:
            best_mae[horizon] = metrics.mae
    rows = [
        LeaderboardRow(
            algorithm=a, horizon=h, metrics=m, best=(m.mae == best_mae[h])
        )
        for a, h, m in ordered
    ]
    # A tie on MAE would mark two winners; keep only the first (lowest sort order).
    marked: set[int] = set()
    deduped = []
    for row in rows:
        if row.best and row.horizon in marked:
            row = LeaderboardRow(row.algorithm, row.horizon, row.metrics, best=False)
        elif row.best:
            marked.add(row.horizon)
        deduped.append(row)
    return Leaderboard(rows=deduped)


# ---------------------------------------------------------------------------
# Serialization: leaderboard.csv / extreme_report.csv / metrics.json.
# Floats carry 4 decimal places; undefined metrics serialize empty/null.
# ---------------------------------------------------------------------------

def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def _round(value: float | None) -> float | None:
    return None if value is None else round(value, 4)


def write_leaderboard_csv(board: Leaderboard, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "horizon", "mae", "rmse", "r2", "mape", "n", "best"])
        for row in board.rows:
            m = row.metrics
            writer.writerow([
                row.algorithm, row.horizon, _fmt(m.mae), _fmt(m.rmse),
                _fmt(m.r2), _fmt(m.mape), m.n, int(row.best),
            ])


def read_leaderboard_csv(path: Path | str) -> Leaderboard:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            metrics = MetricReport(
                mae=float(rec["mae"]),
                rmse=float(rec["rmse"]),
                r2=float(rec["r2"]) if rec["r2"] else None,
                mape=float(rec["mape"]) if rec["mape"] else None,
                n=int(rec["n"]),
            )
            rows.append(
                LeaderboardRow(
                    algorithm=rec["algorithm"],
                    horizon=int(rec["horizon"]),
                    metrics=metrics,
                    best=bool(int(rec["best"])),
                )
            )
    return Leaderboard(rows=rows)


def write_extreme_csv(
    reports: list[tuple[str, int, ExtremeReport]], path: Path | str
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "horizon", "level", "threshold", "n_cases", "share", "mae"])
        for algorithm, horizon, report in reports:
            for lv in report.levels:
                writer.writerow([
                    algorithm, horizon, lv.level, _fmt(lv.threshold),
                    lv.n_cases, _fmt(lv.share), _fmt(lv.mae),
                ])


def write_metrics_json(
    board: Leaderboard,
    extreme: list[tuple[str, int, ExtremeReport]],
    path: Path | str,
    extra: dict | None = None,
) -> None:
    payload = {
        "results": [
            {
                "algorithm": r.algorithm,
                "horizon": r.horizon,
                "mae": _round(r.metrics.mae),
                "rmse": _round(r.metrics.rmse),
                "r2": _round(r.metrics.r2),
                "mape": _round(r.metrics.mape),
                "n": r.metrics.n,
                "best": r.best,
            }
            for r in board.rows
        ],
        "best_by_horizon": {
            str(h): board.best_for(h).algorithm for h in board.horizons()
        },
        "extreme": [
            {
                "algorithm": a,
                "horizon": h,
                "levels": [
                    {
                        "level": lv.level,
                        "threshold": _round(lv.threshold),
                        "n_cases": lv.n_cases,
                        "share": _round(lv.share),
                        "mae": _round(lv.mae),
                    }
                    for lv in rep.levels
                ],
            }
            for a, h, rep in extreme
        ],
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
