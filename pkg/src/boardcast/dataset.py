"""Chronological splitting, leakage-free standardization, and window tensors.

Windows are built per split, after scaling, so nothing crosses a split
boundary and scaler statistics depend on training rows only. A window is a
(channels x lag) slice of consecutive hours; any window whose full span
(lag rows through target hour) would cross a missing hour or an exclusion
gap is dropped.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DegenerateColumnError,
    SchemaMismatchError,
    ValidationError,
)
from .features import BINARY_COLUMNS, TARGET_COLUMN
from .timeutils import epoch_seconds, from_epoch_seconds

SUPPORTED_HORIZONS = (6, 8, 10, 12, 24)

_SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15

    def validate(self) -> None:
        for name in ("train_frac", "val_frac", "test_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1 within 1e-9")


@dataclass(frozen=True)
class WindowSpec:
    lag: int = 24
    horizon: int = 6
    target_column: str = TARGET_COLUMN

    def validate(self) -> None:
        if self.lag < 1:
            raise ValidationError(f"lag must be >= 1, got {self.lag}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")


def chronological_split(
    table: pd.DataFrame, spec: SplitSpec = SplitSpec()
) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Contiguous prefix / middle / suffix split by row count.

    Boundary counts are floored; the remainder goes to the test split.
    """
    spec.validate()
    n = len(table)
    if n < 3:
        raise ValidationError(f"need at least 3 rows to split, got {n}")
    # Epsilon absorbs binary representation error in frac * n products.
    n_train = int(math.floor(n * spec.train_frac + 1e-9))
    n_val = int(math.floor(n * spec.val_frac + 1e-9))
    train = table.iloc[:n_train].reset_index(drop=True)
    val = table.iloc[n_train:n_train + n_val].reset_index(drop=True)
    test = table.iloc[n_train + n_val:].reset_index(drop=True)
    return train, val, test


class ScalerParams:
    """Per-column standardization parameters (population mean / std).

    Columns in ``exempt`` (the binary indicators by default) pass through
    unchanged. Standard deviation uses the population convention (divide by
    n). Instances compare bit-exactly, which the leakage tests rely on.
    """

    def __init__(
        self,
        columns: list[str],
        mean: np.ndarray,
        std: np.ndarray,
        exempt: frozenset[str],
    ):
        self.columns = list(columns)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.exempt = frozenset(exempt)
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ScalerParams)
            and self.columns == other.columns
            and self.exempt == other.exempt
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def __repr__(self) -> str:
        return f"ScalerParams(columns={len(self.columns)}, exempt={len(self.exempt)})"

    def column_stats(self, column: str) -> tuple[float, float]:
        if column not in self._index:
            raise SchemaMismatchError(f"unknown column: {column}")
        i = self._index[column]
        return float(self.mean[i]), float(self.std[i])

    def is_exempt(self, column: str) -> bool:
        return column in self.exempt

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "exempt": sorted(self.exempt),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScalerParams":
        return cls(
            columns=list(data["columns"]),
            mean=np.array(data["mean"], dtype=np.float64),
            std=np.array(data["std"], dtype=np.float64),
            exempt=frozenset(data["exempt"]),
        )


def feature_columns_of(table: pd.DataFrame) -> list[str]:
    return [c for c in table.columns if c != "hour_ts"]


def fit_scaler(
    train_table: pd.DataFrame,
    exempt: frozenset[str] = BINARY_COLUMNS,
) -> ScalerParams:
    """Fit per-column mean/std on training rows only.

    Raises DegenerateColumnError when a non-exempt column is constant; the
    caller may retry with that column added to ``exempt`` (a constant column
    carries no signal, so passing it through is harmless).
    """
    if len(train_table) == 0:
        raise ValidationError("cannot fit scaler on an empty table")
    columns = feature_columns_of(train_table)
    values = train_table[columns].to_numpy(dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population convention (ddof=0)
    exempt_in_table = frozenset(c for c in exempt if c in columns)
    degenerate = [
        c for i, c in enumerate(columns) if std[i] == 0.0 and c not in exempt_in_table
    ]
    if degenerate:
        raise DegenerateColumnError(degenerate)
    for i, c in enumerate(columns):
        if c in exempt_in_table:
            mean[i], std[i] = 0.0, 1.0
    return ScalerParams(columns=columns, mean=mean, std=std, exempt=exempt_in_table)


def fit_scaler_tolerant(
    train_table: pd.DataFrame,
    exempt: frozenset[str] = BINARY_COLUMNS,
) -> tuple[ScalerParams, list[str]]:
    """fit_scaler, but constant columns are exempted instead of raised.

    Short corpora make columns like ``year`` constant; the pipeline treats
    them as pass-through and reports which columns were auto-exempted.
    """
    try:
        return fit_scaler(train_table, exempt), []
    except DegenerateColumnError as err:
        widened = frozenset(exempt) | frozenset(err.columns)
        return fit_scaler(train_table, widened), sorted(err.columns)


def apply_scaler(table: pd.DataFrame, params: ScalerParams) -> pd.DataFrame:
    """Standardize non-exempt columns: (x - mean) / std."""
    columns = feature_columns_of(table)
    if columns != params.columns:
        raise SchemaMismatchError(
            f"table columns do not match scaler (table {len(columns)}, scaler {len(params.columns)})"
        )
    out = table.copy()
    for i, c in enumerate(columns):
        if c not in params.exempt:
            out[c] = (table[c].to_numpy(dtype=np.float64) - params.mean[i]) / params.std[i]
    return out


def invert_scaler(values, params: ScalerParams, column: str):
    """Map scaled values of one column back to original units."""
    mean, std = params.column_stats(column)
    if params.is_exempt(column):
        return values
    return values * std + mean


def scale_value(value: float, params: ScalerParams, column: str) -> float:
    mean, std = params.column_stats(column)
    if params.is_exempt(column):
        return value
    return (value - mean) / std


@dataclass
class WindowedDataset:
    """Sliding-window supervision tensors.

    X has shape (N, d, L): channel-major lag windows. y holds the target at
    h hours past each window's final lag hour; origin_ts records that final
    lag hour per sample.
    """

    X: np.ndarray
    y: np.ndarray
    origin_ts: list[datetime]
    lag: int
    horizon: int
    columns: list[str]
    target_column: str
    insufficient: bool = False

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_channels(self) -> int:
        return self.X.shape[1]

    @property
    def target_index(self) -> int:
        return self.columns.index(self.target_column)


def make_windows(table: pd.DataFrame, spec: WindowSpec = WindowSpec()) -> WindowedDataset:
    """Extract every gap-free sliding window from a sorted hourly table.

    A start row opens a valid window iff the lag rows and the target row
    cover exactly lag + horizon consecutive hours; on a gap-free table of T
    rows that yields N = T - lag - horizon + 1 windows.
    """
    spec.validate()
    columns = feature_columns_of(table)
    if spec.target_column not in columns:
        raise SchemaMismatchError(f"target column {spec.target_column!r} not in table")
    L, h = spec.lag, spec.horizon
    T = len(table)
    span = L + h
    if T < span:
        return WindowedDataset(
            X=np.zeros((0, len(columns), L)),
            y=np.zeros(0),
            origin_ts=[],
            lag=L,
            horizon=h,
            columns=columns,
            target_column=spec.target_column,
            insufficient=True,
        )

    ts = np.array([epoch_seconds(t) for t in table["hour_ts"]])
    if not np.all(np.diff(ts) > 0):
        raise ValidationError("table must be sorted by hour_ts with no duplicates")
    values = table[columns].to_numpy(dtype=np.float64)
    target = table[spec.target_column].to_numpy(dtype=np.float64)

    starts = np.arange(T - span + 1)
    contiguous = ts[starts + span - 1] - ts[starts] == (span - 1) * _SECONDS_PER_HOUR
    starts = starts[contiguous]

    lag_view = np.lib.stride_tricks.sliding_window_view(values, L, axis=0)  # (T-L+1, d, L)
    X = np.ascontiguousarray(lag_view[starts])
    y = target[starts + span - 1].copy()
    origin_ts = [table["hour_ts"].iloc[int(s) + L - 1].to_pydatetime() for s in starts]
    return WindowedDataset(
        X=X,
        y=y,
        origin_ts=origin_ts,
        lag=L,
        horizon=h,
        columns=columns,
        target_column=spec.target_column,
        insufficient=False,
    )


# ---------------------------------------------------------------------------
# Binary cache: magic "BCW1", uint32 LE header length, UTF-8 JSON header
# {lag, horizon, n_channels, n_windows, columns, target_column, schema_hash,
#  scaler|null}, then X row-major float64 LE (N*d*L), y float64 LE (N),
# origin timestamps int64 LE epoch seconds (N).
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"BCW1"


def schema_hash(columns: list[str]) -> str:
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:16]


def save_windows(ds: WindowedDataset, path: Path | str, scaler: ScalerParams | None = None) -> None:
    header = {
        "lag": ds.lag,
        "horizon": ds.horizon,
        "n_channels": ds.n_channels,
        "n_windows": len(ds),
        "columns": ds.columns,
        "target_column": ds.target_column,
        "schema_hash": schema_hash(ds.columns),
        "scaler": scaler.to_dict() if scaler is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<f8").tobytes())
        origin = np.array([int(epoch_seconds(t)) for t in ds.origin_ts], dtype="<i8")
        fh.write(origin.tobytes())


def load_windows(path: Path | str) -> tuple[WindowedDataset, ScalerParams | None]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CACHE_MAGIC:
            raise ValidationError(f"not a window cache file: bad magic {magic!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        n, d, L = header["n_windows"], header["n_channels"], header["lag"]
        X = np.frombuffer(fh.read(n * d * L * 8), dtype="<f8").reshape(n, d, L).copy()
        y = np.frombuffer(fh.read(n * 8), dtype="<f8").copy()
        origin_raw = np.frombuffer(fh.read(n * 8), dtype="<i8")
    if header["schema_hash"] != schema_hash(header["columns"]):
        raise ValidationError("window cache schema hash mismatch")
    ds = WindowedDataset(
        X=X,
        y=y,
        origin_ts=[from_epoch_seconds(int(s)) for s in origin_raw],
        lag=L,
        horizon=header["horizon"],
        columns=list(header["columns"]),
        target_column=header["target_column"],
        insufficient=(n == 0),
    )
    scaler = ScalerParams.from_dict(header["scaler"]) if header["scaler"] else None
    return ds, scaler
