"""Linear forecasters and their training loop.

Two model families, both mapping a (channels x lag) window to one scalar in
scaled units:

* nlinear: a per-channel linear layer over the lag axis, optionally centered
  on each channel's last observation (subtract before the layer, add back
  after), followed by a learned channel-mixing vector.
* dlinear: moving-average decomposition of each channel into trend and
  residual, separate per-channel (or shared) linear layers for the two
  parts, then the same channel mixing.

The native output of these architectures is a per-channel forecast vector;
the channel-mixing layer (v, b_out) collapses it to the single target scalar
this platform predicts. Gradients are written out analytically (checked
against finite differences in the test suite) and optimized with mini-batch
gradient descent using per-parameter first/second moment accumulation.
All array math goes through np.einsum so results are reproducible
bit-for-bit for a fixed seed.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import ScalerParams, WindowedDataset
from .errors import (
    DataGapError,
    SchemaMismatchError,
    TrainingFailure,
    ValidationError,
)
from .timeutils import iso, parse_iso

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

MODEL_FORMAT = "boardcast-model-v1"


@dataclass(frozen=True)
class NLinearConfig:
    lag: int
    channels: int
    center_on_last: bool = True

    def validate(self) -> None:
        if self.lag < 1 or self.channels < 1:
            raise ValidationError("lag and channels must be >= 1")


@dataclass(frozen=True)
class DLinearConfig:
    lag: int
    channels: int
    kernel_size: int = 25
    shared_weights: bool = False

    def validate(self) -> None:
        if self.lag < 1 or self.channels < 1:
            raise ValidationError("lag and channels must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 1 <= self.kernel_size <= self.lag:
            raise ValidationError(
                f"kernel_size must lie in [1, lag={self.lag}], got {self.kernel_size}"
            )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    loss: str = "mse"  # "mse" | "huber"
    huber_delta: float = 1.0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValidationError("patience must lie in [1, max_epochs]")
        if self.loss not in ("mse", "huber"):
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.loss == "huber" and self.huber_delta <= 0:
            raise ValidationError("huber_delta must be > 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0          # 1-based
    stopped_reason: str = ""     # early_stop | max_epochs | callback

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "stopped_reason": self.stopped_reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainHistory":
        return cls(
            train_loss=list(data["train_loss"]),
            val_loss=list(data["val_loss"]),
            best_epoch=data["best_epoch"],
            stopped_reason=data["stopped_reason"],
        )


def moving_average(series: np.ndarray, kernel_size: int) -> np.ndarray:
    """Centered moving average with replicate padding; output length equals input.

    Works on the last axis, so a (d, L) or (N, d, L) stack of channels is
    smoothed in one call.
    """
    series = np.asarray(series, dtype=np.float64)
    L = series.shape[-1]
    if kernel_size % 2 == 0:
        raise ValidationError(f"kernel_size must be odd, got {kernel_size}")
    if not 1 <= kernel_size <= L:
        raise ValidationError(f"kernel_size must lie in [1, {L}], got {kernel_size}")
    if kernel_size == 1:
        return series.copy()
    pad = (kernel_size - 1) // 2
    front = np.repeat(series[..., :1], pad, axis=-1)
    back = np.repeat(series[..., -1:], pad, axis=-1)
    padded = np.concatenate([front, series, back], axis=-1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel_size, axis=-1)
    return windows.mean(axis=-1)


def decompose(window: np.ndarray, kernel_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Split each channel into (trend, residual); trend + residual == window."""
    trend = moving_average(window, kernel_size)
    return trend, np.asarray(window, dtype=np.float64) - trend


def _init_params(
    config: NLinearConfig | DLinearConfig, target_channel: int
) -> dict[str, np.ndarray]:
    """Window-mean lag weights and a one-hot mixing vector on the target channel."""
    d, L = config.channels, config.lag
    v = np.zeros(d)
    v[target_channel] = 1.0
    if isinstance(config, NLinearConfig):
        return {
            "w": np.full((d, L), 1.0 / L),
            "b": np.zeros(d),
            "v": v,
            "b_out": np.zeros(1),
        }
    lag_shape = (1, L) if config.shared_weights else (d, L)
    return {
        "w_trend": np.full(lag_shape, 1.0 / L),
        "w_res": np.full(lag_shape, 1.0 / L),
        "b": np.zeros(d),
        "v": v,
        "b_out": np.zeros(1),
    }


def _channel_outputs_nlinear(
    X: np.ndarray, params: dict[str, np.ndarray], center: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel outputs U (N, d) and the effective lag input used by the layer."""
    if center:
        last = X[..., -1]
        base = X - last[..., None]
        U = np.einsum("ndl,dl->nd", base, params["w"]) + params["b"] + last
    else:
        base = X
        U = np.einsum("ndl,dl->nd", base, params["w"]) + params["b"]
    return U, base


def _lag_product(X_part: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:  # shared lag weights across channels
        return np.einsum("ndl,l->nd", X_part, w[0])
    return np.einsum("ndl,dl->nd", X_part, w)


def _forward_batch(
    algorithm: str,
    config: NLinearConfig | DLinearConfig,
    params: dict[str, np.ndarray],
    X: np.ndarray,
) -> np.ndarray:
    if algorithm == "nlinear":
        U, _ = _channel_outputs_nlinear(X, params, config.center_on_last)
    elif algorithm == "dlinear":
        trend, residual = decompose(X, config.kernel_size)
        U = _lag_product(trend, params["w_trend"]) + _lag_product(residual, params["w_res"])
        U = U + params["b"]
    else:
        raise ValidationError(f"unknown algorithm {algorithm!r}")
    return np.einsum("nd,d->n", U, params["v"]) + params["b_out"][0]


def _loss_and_output_grad(
    yhat: np.ndarray, y: np.ndarray, loss: str, delta: float
) -> tuple[float, np.ndarray]:
    r = yhat - y
    n = r.shape[0]
    if loss == "mse":
        return float(np.mean(r * r)), 2.0 * r / n
    # Huber: quadratic inside +-delta, linear outside.
    absr = np.abs(r)
    quad = absr <= delta
    values = np.where(quad, 0.5 * r * r, delta * (absr - 0.5 * delta))
    grad = np.where(quad, r, delta * np.sign(r)) / n
    return float(np.mean(values)), grad


def loss_and_grads(
    algorithm: str,
    config: NLinearConfig | DLinearConfig,
    params: dict[str, np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    loss: str = "mse",
    delta: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss over a batch and its analytic gradient for every parameter."""
    if algorithm == "nlinear":
        U, base = _channel_outputs_nlinear(X, params, config.center_on_last)
        parts = {"": base}
        weight_names = {"": "w"}
    else:
        trend, residual = decompose(X, config.kernel_size)
        U = _lag_product(trend, params["w_trend"]) + _lag_product(residual, params["w_res"])
        U = U + params["b"]
        parts = {"trend": trend, "res": residual}
        weight_names = {"trend": "w_trend", "res": "w_res"}

    yhat = np.einsum("nd,d->n", U, params["v"]) + params["b_out"][0]
    value, g_out = _loss_and_output_grad(yhat, y, loss, delta)

    grads: dict[str, np.ndarray] = {}
    grads["v"] = np.einsum("n,nd->d", g_out, U)
    grads["b_out"] = np.array([g_out.sum()])
    dU = np.einsum("n,d->nd", g_out, params["v"])
    grads["b"] = dU.sum(axis=0)
    for key, part in parts.items():
        name = weight_names[key]
        if params[name].shape[0] == 1:
            grads[name] = np.einsum("nd,ndl->l", dU, part)[None, :]
        else:
            grads[name] = np.einsum("nd,ndl->dl", dU, part)
    return value, grads


@dataclass
class FittedModel:
    """A trained forecaster plus everything needed to reproduce its predictions."""

    algorithm: str
    config: NLinearConfig | DLinearConfig
    horizon: int
    columns: list[str]
    target_channel: int
    params: dict[str, np.ndarray]
    scaler: ScalerParams | None = None
    extreme_mean: float | None = None
    extreme_sd: float | None = None
    train_start: datetime | None = None
    train_end: datetime | None = None
    seed: int = 0
    history: TrainHistory | None = None
    metrics: dict | None = None

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Batch forward pass on (N, d, L) windows; returns scaled-unit outputs."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None, ...]
        if X.shape[1] != self.config.channels or X.shape[2] != self.config.lag:
            raise SchemaMismatchError(
                f"window shape {X.shape[1:]} does not match model "
                f"(d={self.config.channels}, L={self.config.lag})"
            )
        out = _forward_batch(self.algorithm, self.config, self.params, X)
        return out[0] if single else out

    # -- persistence ---------------------------------------------------

    def to_dict(self) -> dict:
        def pack(arr: np.ndarray) -> dict:
            return {
                "shape": list(arr.shape),
                "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(),
            }

        cfg = {"lag": self.config.lag, "channels": self.config.channels}
        if isinstance(self.config, NLinearConfig):
            cfg["center_on_last"] = self.config.center_on_last
        else:
            cfg["kernel_size"] = self.config.kernel_size
            cfg["shared_weights"] = self.config.shared_weights
        return {
            "format": MODEL_FORMAT,
            "algorithm": self.algorithm,
            "config": cfg,
            "horizon": self.horizon,
            "columns": self.columns,
            "target_channel": self.target_channel,
            "seed": self.seed,
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "extreme_mean": self.extreme_mean,
            "extreme_sd": self.extreme_sd,
            "train_start": iso(self.train_start) if self.train_start else None,
            "train_end": iso(self.train_end) if self.train_end else None,
            "history": self.history.to_dict() if self.history else None,
            "metrics": self.metrics,
            "weights": {name: pack(arr) for name, arr in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        if data.get("format") != MODEL_FORMAT:
            raise ValidationError(f"unsupported model format: {data.get('format')!r}")
        cfg = data["config"]
        if data["algorithm"] == "nlinear":
            config: NLinearConfig | DLinearConfig = NLinearConfig(
                lag=cfg["lag"], channels=cfg["channels"], center_on_last=cfg["center_on_last"]
            )
        else:
            config = DLinearConfig(
                lag=cfg["lag"],
                channels=cfg["channels"],
                kernel_size=cfg["kernel_size"],
                shared_weights=cfg["shared_weights"],
            )
        params = {}
        for name, packed in data["weights"].items():
            arr = np.frombuffer(base64.b64decode(packed["data"]), dtype="<f8")
            params[name] = arr.reshape(packed["shape"]).copy()
        return cls(
            algorithm=data["algorithm"],
            config=config,
            horizon=data["horizon"],
            columns=list(data["columns"]),
            target_channel=data["target_channel"],
            params=params,
            scaler=ScalerParams.from_dict(data["scaler"]) if data["scaler"] else None,
            extreme_mean=data["extreme_mean"],
            extreme_sd=data["extreme_sd"],
            train_start=parse_iso(data["train_start"]) if data["train_start"] else None,
            train_end=parse_iso(data["train_end"]) if data["train_end"] else None,
            seed=data["seed"],
            history=TrainHistory.from_dict(data["history"]) if data["history"] else None,
            metrics=data["metrics"],
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "FittedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward_nlinear(window: np.ndarray, model: FittedModel) -> float:
    if model.algorithm != "nlinear":
        raise ValidationError("model is not an nlinear model")
    return float(model.forward(window))


def forward_dlinear(window: np.ndarray, model: FittedModel) -> float:
    if model.algorithm != "dlinear":
        raise ValidationError("model is not a dlinear model")
    return float(model.forward(window))


def train(
    model_config: NLinearConfig | DLinearConfig,
    train_config: TrainConfig,
    train_set: WindowedDataset,
    val_set: WindowedDataset,
    epoch_callback=None,
) -> FittedModel:
    """Mini-batch training with early stopping on validation loss.

    Deterministic for a fixed (seed, data, config): batch order comes from a
    seeded generator and all math is einsum-based. Returns the weights of the
    best validation epoch. ``epoch_callback(epoch, train_loss, val_loss)``
    may return False to stop training early (used by the tuner's pruner).
    """
    model_config.validate()
    train_config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValidationError("train and validation sets must be non-empty")
    if train_set.columns != val_set.columns:
        raise SchemaMismatchError("train/val column sets differ")
    d, L = train_set.X.shape[1], train_set.X.shape[2]
    if (d, L) != (model_config.channels, model_config.lag):
        raise SchemaMismatchError(
            f"dataset shape (d={d}, L={L}) does not match config "
            f"(d={model_config.channels}, L={model_config.lag})"
        )

    algorithm = "nlinear" if isinstance(model_config, NLinearConfig) else "dlinear"
    params = _init_params(model_config, train_set.target_index)
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0

    rng = np.random.default_rng(train_config.seed)
    n = len(train_set)
    history = TrainHistory()
    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    epochs_since_best = 0
    lr = train_config.learning_rate

    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            value, grads = loss_and_grads(
                algorithm, model_config, params,
                train_set.X[idx], train_set.y[idx],
                loss=train_config.loss, delta=train_config.huber_delta,
            )
            if not np.isfinite(value):
                raise TrainingFailure(
                    f"non-finite loss at epoch {epoch}", last_finite_epoch=epoch - 1
                )
            batch_losses.append((value, len(idx)))
            step += 1
            for key in params:
                g = grads[key]
                m_state[key] = _ADAM_BETA1 * m_state[key] + (1 - _ADAM_BETA1) * g
                v_state[key] = _ADAM_BETA2 * v_state[key] + (1 - _ADAM_BETA2) * (g * g)
                m_hat = m_state[key] / (1 - _ADAM_BETA1 ** step)
                v_hat = v_state[key] / (1 - _ADAM_BETA2 ** step)
                params[key] = params[key] - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)

        train_loss = float(
            sum(v * w for v, w in batch_losses) / sum(w for _, w in batch_losses)
        )
        val_out = _forward_batch(algorithm, model_config, params, val_set.X)
        val_loss, _ = _loss_and_output_grad(
            val_out, val_set.y, train_config.loss, train_config.huber_delta
        )
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingFailure(
                f"non-finite loss at epoch {epoch}", last_finite_epoch=epoch - 1
            )
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1

        if epoch_callback is not None and not epoch_callback(epoch, train_loss, val_loss):
            history.stopped_reason = "callback"
            break
        if epochs_since_best >= train_config.patience:
            history.stopped_reason = "early_stop"
            break
    else:
        history.stopped_reason = "max_epochs"

    origins = train_set.origin_ts
    return FittedModel(
        algorithm=algorithm,
        config=model_config,
        horizon=train_set.horizon,
        columns=list(train_set.columns),
        target_channel=train_set.target_index,
        params=best_params,
        seed=train_config.seed,
        train_start=origins[0] if origins else None,
        train_end=origins[-1] if origins else None,
        history=history,
    )


# ---------------------------------------------------------------------------
# Prediction in original units, and the two naive baselines.
# ---------------------------------------------------------------------------

def scale_window(window: np.ndarray, scaler: ScalerParams, columns: list[str]) -> np.ndarray:
    """Standardize a (d, L) window whose rows follow ``columns`` order."""
    if columns != scaler.columns:
        raise SchemaMismatchError("window columns do not match scaler columns")
    mean = scaler.mean[:, None]
    std = scaler.std[:, None]
    return (np.asarray(window, dtype=np.float64) - mean) / std


def predict(model: FittedModel, window_unscaled: np.ndarray, scaler: ScalerParams | None = None) -> float:
    """Forecast in minutes from an unscaled (d, L) window.

    Scales the window, runs the forward pass, inverse-scales the output, and
    clamps at zero (boarding time cannot be negative).
    """
    scaler = scaler if scaler is not None else model.scaler
    if scaler is None:
        raise SchemaMismatchError("model has no scaler attached and none was provided")
    scaled = scale_window(window_unscaled, scaler, model.columns)
    out = float(model.forward(scaled))
    target = model.columns[model.target_channel]
    minutes = float(invert_target(out, scaler, target))
    return max(minutes, 0.0)


def invert_target(value: float, scaler: ScalerParams, column: str) -> float:
    mean, std = scaler.column_stats(column)
    if scaler.is_exempt(column):
        return value
    return value * std + mean


def persistence_baseline(window_unscaled: np.ndarray, target_channel: int) -> float:
    """Forecast = the target's last observed value in the window."""
    return float(np.asarray(window_unscaled)[target_channel, -1])


def seasonal_baseline(table: pd.DataFrame, t: datetime, horizon: int, target_column: str) -> float:
    """Forecast for t + horizon = observed target at the same clock hour one day earlier."""
    lookup = t + pd.Timedelta(hours=horizon - 24)
    ts = table["hour_ts"]
    if len(table) == 0 or lookup < ts.iloc[0]:
        raise DataGapError(f"seasonal lookup {iso(lookup)} precedes table start")
    match = table.loc[ts == pd.Timestamp(lookup), target_column]
    if match.empty:
        raise DataGapError(f"no row at {iso(lookup)} for seasonal baseline")
    return float(match.iloc[0])


def seasonal_from_window(window_unscaled: np.ndarray, target_channel: int, lag: int, horizon: int) -> float:
    """Seasonal-naive forecast read out of the lag window itself.

    The value at t + horizon - 24 sits at lag index lag - 1 - (24 - horizon)
    whenever that is inside the window (true for lag 24 and all supported
    horizons).
    """
    index = lag - 1 - (24 - horizon)
    if index < 0:
        raise ValidationError(
            f"window of lag {lag} does not reach back to t + {horizon} - 24"
        )
    return float(np.asarray(window_unscaled)[target_channel, index])
