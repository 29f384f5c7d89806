"""End-to-end modeling pipeline shared by the CLI, the retrain worker, and
the experiments API.

Order of operations (leakage-free by construction):
  1. chronological 70/15/15 split of the hourly table,
  2. extreme-indicator statistics (mean, sd of the target) from the training
     split only, indicator filled on all three splits with those statistics,
  3. scaler fitted on the training split (constant columns auto-exempted),
  4. windows built per split, scaled and unscaled variants side by side.

Trained models carry their scaler and extreme statistics so serving-time
windows can be prepared identically.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .dataset import (
    ScalerParams,
    SplitSpec,
    WindowSpec,
    WindowedDataset,
    apply_scaler,
    chronological_split,
    fit_scaler_tolerant,
    make_windows,
)
from .errors import SchemaMismatchError, ValidationError
from .evaluation import (
    ExtremeReport,
    MetricReport,
    compute_metrics,
    extreme_thresholds,
    slice_and_score,
)
from .features import BINARY_COLUMNS, extreme_indicator
from .models import (
    DLinearConfig,
    FittedModel,
    NLinearConfig,
    TrainConfig,
    seasonal_from_window,
    train,
)

MODEL_ALGORITHMS = ("nlinear", "dlinear")
BASELINE_ALGORITHMS = ("persistence", "seasonal")
ALGORITHM_LABELS = {
    "nlinear": "NLinear",
    "dlinear": "DLinear",
    "persistence": "Persistence",
    "seasonal": "SeasonalNaive",
}


class PreparedData:
    """Split, standardized, windowed view of one hourly table for one horizon."""

    def __init__(
        self,
        table: pd.DataFrame,
        window_spec: WindowSpec,
        split_spec: SplitSpec = SplitSpec(),
        feature_columns: list[str] | None = None,
        scaling: str = "standard",
    ):
        if scaling not in ("standard", "none"):
            raise ValidationError(f"unknown scaling method {scaling!r}")
        window_spec.validate()
        columns = feature_columns or [c for c in table.columns if c != "hour_ts"]
        if window_spec.target_column not in columns:
            raise ValidationError(
                f"target column {window_spec.target_column!r} not among selected features"
            )
        selected = table[["hour_ts"] + columns]

        train_rows, val_rows, test_rows = chronological_split(selected, split_spec)
        target = window_spec.target_column
        target_train = train_rows[target].to_numpy(dtype=np.float64)
        self.extreme_mean = float(target_train.mean())
        self.extreme_sd = float(target_train.std())

        if "extreme_boarding_indicator" in columns:
            train_rows = extreme_indicator(train_rows, self.extreme_mean, self.extreme_sd)
            val_rows = extreme_indicator(val_rows, self.extreme_mean, self.extreme_sd)
            test_rows = extreme_indicator(test_rows, self.extreme_mean, self.extreme_sd)

        self.window_spec = window_spec
        self.split_spec = split_spec
        self.columns = columns
        self.target_column = target
        self.train_rows, self.val_rows, self.test_rows = train_rows, val_rows, test_rows

        if scaling == "standard":
            self.scaler, self.auto_exempted = fit_scaler_tolerant(train_rows, BINARY_COLUMNS)
        else:
            # Identity scaler: every column exempt.
            self.scaler = ScalerParams(
                columns=columns,
                mean=np.zeros(len(columns)),
                std=np.ones(len(columns)),
                exempt=frozenset(columns),
            )
            self.auto_exempted = []

        self.train = make_windows(apply_scaler(train_rows, self.scaler), window_spec)
        self.val = make_windows(apply_scaler(val_rows, self.scaler), window_spec)
        self.test = make_windows(apply_scaler(test_rows, self.scaler), window_spec)
        self.train_unscaled = make_windows(train_rows, window_spec)
        self.val_unscaled = make_windows(val_rows, window_spec)
        self.test_unscaled = make_windows(test_rows, window_spec)


def predictions_minutes(model: FittedModel, scaled: WindowedDataset, scaler: ScalerParams) -> np.ndarray:
    """Batch predictions in original minutes, clamped at zero."""
    out = model.forward(scaled.X)
    mean, std = scaler.column_stats(scaled.target_column)
    if not scaler.is_exempt(scaled.target_column):
        out = out * std + mean
    return np.maximum(out, 0.0)


def baseline_predictions(algorithm: str, unscaled: WindowedDataset) -> np.ndarray:
    """Persistence / seasonal-naive forecasts straight from unscaled windows."""
    target = unscaled.target_index
    if algorithm == "persistence":
        return unscaled.X[:, target, -1].copy()
    if algorithm == "seasonal":
        index = unscaled.lag - 1 - (24 - unscaled.horizon)
        if index < 0:
            raise ValidationError(
                f"lag {unscaled.lag} too short for seasonal baseline at h={unscaled.horizon}"
            )
        return unscaled.X[:, target, index].copy()
    raise ValidationError(f"unknown baseline {algorithm!r}")


def train_model(
    prepared: PreparedData,
    algorithm: str,
    train_config: TrainConfig,
    kernel_size: int = 25,
    shared_weights: bool = False,
    center_on_last: bool = True,
) -> FittedModel:
    """Train one forecaster on prepared data and attach serving metadata."""
    d = len(prepared.columns)
    L = prepared.window_spec.lag
    if algorithm == "nlinear":
        model_config: NLinearConfig | DLinearConfig = NLinearConfig(
            lag=L, channels=d, center_on_last=center_on_last
        )
    elif algorithm == "dlinear":
        kernel = min(kernel_size, L if L % 2 == 1 else L - 1)
        model_config = DLinearConfig(
            lag=L, channels=d, kernel_size=kernel, shared_weights=shared_weights
        )
    else:
        raise ValidationError(f"not a trainable algorithm: {algorithm!r}")

    model = train(model_config, train_config, prepared.train, prepared.val)
    model.scaler = prepared.scaler
    model.extreme_mean = prepared.extreme_mean
    model.extreme_sd = prepared.extreme_sd

    val_pred = predictions_minutes(model, prepared.val, prepared.scaler)
    val_true = prepared.val_unscaled.y
    val_metrics = compute_metrics(val_true, val_pred)
    model.metrics = {"split": "val", **val_metrics.to_dict()}
    return model


def score_on_test(
    prepared: PreparedData, model: FittedModel
) -> tuple[MetricReport, ExtremeReport]:
    """Test-split metrics plus the extreme-level slice for a trained model."""
    if model.columns != prepared.columns:
        raise SchemaMismatchError("model feature columns do not match prepared data")
    yhat = predictions_minutes(model, prepared.test, prepared.scaler)
    y = prepared.test_unscaled.y
    metrics = compute_metrics(y, yhat)
    thresholds = extreme_thresholds(prepared.extreme_mean, prepared.extreme_sd)
    return metrics, slice_and_score(y, yhat, thresholds)


def score_baseline(
    prepared: PreparedData, algorithm: str
) -> tuple[MetricReport, ExtremeReport]:
    yhat = baseline_predictions(algorithm, prepared.test_unscaled)
    y = prepared.test_unscaled.y
    metrics = compute_metrics(y, yhat)
    thresholds = extreme_thresholds(prepared.extreme_mean, prepared.extreme_sd)
    return metrics, slice_and_score(y, yhat, thresholds)
