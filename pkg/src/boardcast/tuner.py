"""Seeded random-search hyperparameter tuning with median pruning.

Trials run sequentially: each samples a config from the space, trains via
models.train, and may be pruned once five epochs have run if its validation
loss exceeds the median of earlier trials' losses at the same epoch. Because
mse and huber training produce loss values on different scales, pruning
medians are kept per loss function, and the final selection metric is the
best model's validation MSE recomputed uniformly. The whole search is
deterministic in (space, data, n_trials, seed).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median

import numpy as np

from .dataset import WindowedDataset
from .errors import TrainingFailure, TuningError, ValidationError
from .models import DLinearConfig, FittedModel, NLinearConfig, TrainConfig, train

PRUNE_WARMUP_EPOCHS = 5


@dataclass(frozen=True)
class SearchSpace:
    learning_rate_range: tuple[float, float] = (1e-4, 1e-1)  # log-uniform
    batch_sizes: tuple[int, ...] = (32, 64, 128, 256)
    kernel_sizes: tuple[int, ...] = (3, 5, 9, 13, 25)  # dlinear only; filtered to <= lag
    shared_weights: tuple[bool, ...] = (False, True)   # dlinear only
    center_on_last: tuple[bool, ...] = (True, False)   # nlinear only
    losses: tuple[tuple[str, float], ...] = (("mse", 1.0), ("huber", 1.0))

    def validate(self, algorithm: str) -> None:
        lo, hi = self.learning_rate_range
        if not 0 < lo <= hi:
            raise ValidationError("learning_rate_range must satisfy 0 < lo <= hi")
        if not self.batch_sizes or any(b < 1 for b in self.batch_sizes):
            raise ValidationError("batch_sizes must be non-empty positive ints")
        if not self.losses:
            raise ValidationError("losses must be non-empty")
        if algorithm == "dlinear":
            if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
                raise ValidationError("kernel_sizes must be odd positive ints")
            if not self.shared_weights:
                raise ValidationError("shared_weights choices must be non-empty")
        elif algorithm == "nlinear":
            if not self.center_on_last:
                raise ValidationError("center_on_last choices must be non-empty")
        else:
            raise ValidationError(f"unknown algorithm {algorithm!r}")

    def sample(self, algorithm: str, lag: int, rng: np.random.Generator) -> dict:
        lo, hi = self.learning_rate_range
        config = {
            "learning_rate": float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            "batch_size": int(self.batch_sizes[rng.integers(len(self.batch_sizes))]),
        }
        loss, delta = self.losses[rng.integers(len(self.losses))]
        config["loss"] = loss
        config["huber_delta"] = float(delta)
        if algorithm == "dlinear":
            kernels = [k for k in self.kernel_sizes if k <= lag]
            if not kernels:
                raise ValidationError(f"no kernel size in {self.kernel_sizes} fits lag {lag}")
            config["kernel_size"] = int(kernels[rng.integers(len(kernels))])
            config["shared_weights"] = bool(self.shared_weights[rng.integers(len(self.shared_weights))])
        else:
            config["center_on_last"] = bool(self.center_on_last[rng.integers(len(self.center_on_last))])
        return config


@dataclass
class Trial:
    trial_id: int
    config: dict
    epoch_val_losses: list[float] = field(default_factory=list)
    final_val_loss: float | None = None
    status: str = "completed"  # completed | pruned | failed
    pruned_epoch: int | None = None
    epochs_run: int = 0
    error: str | None = None
    model: FittedModel | None = None


def _trial_seed(seed: int, trial_id: int) -> int:
    return (seed * 100_003 + trial_id) % (2**31)


def random_search(
    algorithm: str,
    space: SearchSpace,
    train_set: WindowedDataset,
    val_set: WindowedDataset,
    n_trials: int = 20,
    seed: int = 0,
    base_config: TrainConfig = TrainConfig(),
) -> tuple[Trial, list[Trial]]:
    """Run the search; returns (best trial, all trials).

    Best = lowest final validation loss among completed trials, ties broken
    by lower trial id. Epoch/patience budgets come from ``base_config``.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    space.validate(algorithm)
    lag, channels = train_set.lag, train_set.X.shape[1]
    rng = np.random.default_rng(seed)
    # Median pools keyed by (loss function, epoch): huber and mse values are
    # not on the same scale, so curves only race within their own family.
    losses_at_epoch: dict[tuple[str, int], list[float]] = {}
    trials: list[Trial] = []

    for trial_id in range(n_trials):
        config = space.sample(algorithm, lag, rng)
        trial = Trial(trial_id=trial_id, config=dict(config))
        if algorithm == "dlinear":
            model_config: NLinearConfig | DLinearConfig = DLinearConfig(
                lag=lag, channels=channels,
                kernel_size=config["kernel_size"],
                shared_weights=config["shared_weights"],
            )
        else:
            model_config = NLinearConfig(
                lag=lag, channels=channels, center_on_last=config["center_on_last"]
            )
        train_config = TrainConfig(
            learning_rate=config["learning_rate"],
            batch_size=config["batch_size"],
            max_epochs=base_config.max_epochs,
            patience=base_config.patience,
            seed=_trial_seed(seed, trial_id),
            loss=config["loss"],
            huber_delta=config["huber_delta"],
        )

        loss_kind = config["loss"]

        def on_epoch(epoch: int, train_loss: float, val_loss: float) -> bool:
            trial.epoch_val_losses.append(val_loss)
            trial.epochs_run = epoch
            prior = losses_at_epoch.get((loss_kind, epoch))
            if epoch >= PRUNE_WARMUP_EPOCHS and prior and val_loss > median(prior):
                trial.status = "pruned"
                trial.pruned_epoch = epoch
                return False
            return True

        try:
            model = train(model_config, train_config, train_set, val_set, epoch_callback=on_epoch)
            if trial.status != "pruned":
                trial.status = "completed"
                # Selection metric: validation MSE of the best-epoch weights,
                # uniform across trials regardless of the training loss.
                residual = model.forward(val_set.X) - val_set.y
                trial.final_val_loss = float(np.mean(residual * residual))
                trial.model = model
        except TrainingFailure as err:
            trial.status = "failed"
            trial.error = str(err)

        for epoch, loss_value in enumerate(trial.epoch_val_losses, start=1):
            losses_at_epoch.setdefault((loss_kind, epoch), []).append(loss_value)
        trials.append(trial)

    completed = [t for t in trials if t.status == "completed"]
    if not completed:
        diagnostics = [
            {"trial_id": t.trial_id, "status": t.status, "error": t.error} for t in trials
        ]
        raise TuningError("all tuning trials failed", trials=diagnostics)
    best = min(completed, key=lambda t: (t.final_val_loss, t.trial_id))
    return best, trials


_TRIAL_FIELDS = [
    "trial_id", "learning_rate", "batch_size", "loss", "huber_delta",
    "kernel_size", "shared_weights", "center_on_last",
    "status", "epochs_run", "final_val_loss", "pruned_epoch",
]


def write_trials_csv(trials: list[Trial], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TRIAL_FIELDS)
        writer.writeheader()
        for t in trials:
            row = {k: t.config.get(k, "") for k in _TRIAL_FIELDS if k in t.config}
            row.update(
                trial_id=t.trial_id,
                status=t.status,
                epochs_run=t.epochs_run,
                final_val_loss="" if t.final_val_loss is None else repr(t.final_val_loss),
                pruned_epoch="" if t.pruned_epoch is None else t.pruned_epoch,
            )
            writer.writerow(row)


def write_best_config_json(algorithm: str, best: Trial, path: Path | str) -> None:
    payload = {
        "algorithm": algorithm,
        "trial_id": best.trial_id,
        "final_val_loss": best.final_val_loss,
        "config": best.config,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
