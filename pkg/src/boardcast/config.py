"""Run configuration: a YAML key-value file plus CLI flag overrides (flags win).

Top-level keys (all optional; defaults shown in README):
  paths:    corpus_dir, out_dir, model_dir, store
  scenario: seed, start_ts, end_ts, base_arrival_rate, daily_amplitude,
            weekly_amplitude, esi_mix, mean_wait_min, mean_treat_min,
            mean_board_min, congestion_coupling, admit_probability,
            event_rate_multipliers
  window:   lag, target_column
  horizons: subset of [6, 8, 10, 12, 24]
  split:    train_frac, val_frac, test_frac
  train:    learning_rate, batch_size, max_epochs, patience, seed, loss, huber_delta
  search:   n_trials, learning_rate_range, batch_sizes, kernel_sizes
  monitor:  rolling_window, max_mae, min_r2, max_mape, cooldown
  serve:    port, token
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .dataset import SUPPORTED_HORIZONS, SplitSpec, WindowSpec
from .errors import ValidationError
from .models import TrainConfig
from .scenario import ScenarioConfig
from .service import MonitorConfig
from .timeutils import parse_iso, utc
from .tuner import SearchSpace

DEFAULT_SCENARIO = ScenarioConfig(
    seed=7,
    start_ts=utc(2022, 1, 1),
    end_ts=utc(2022, 4, 1),
)


@dataclass
class RunConfig:
    corpus_dir: Path = Path("corpus")
    out_dir: Path = Path("out")
    model_dir: Path = Path("models")
    store_path: Path | None = None  # defaults to out_dir / "platform.db"
    scenario: ScenarioConfig = DEFAULT_SCENARIO
    window: WindowSpec = WindowSpec()
    horizons: tuple[int, ...] = SUPPORTED_HORIZONS
    split: SplitSpec = SplitSpec()
    train: TrainConfig = TrainConfig()
    search: SearchSpace = SearchSpace()
    n_trials: int = 20
    monitor: MonitorConfig = MonitorConfig()
    port: int = 8800
    token: str | None = None

    def resolved_store_path(self) -> Path:
        return self.store_path if self.store_path is not None else self.out_dir / "platform.db"

    def validate(self) -> None:
        bad = [h for h in self.horizons if h not in SUPPORTED_HORIZONS]
        if bad:
            raise ValidationError(
                f"unsupported horizons {bad}; supported: {list(SUPPORTED_HORIZONS)}"
            )
        if not self.horizons:
            raise ValidationError("at least one horizon required")
        self.scenario.validate()
        self.window.validate()
        self.split.validate()
        self.train.validate()
        self.monitor.validate()

    def describe(self) -> dict:
        return {
            "paths": {
                "corpus_dir": str(self.corpus_dir),
                "out_dir": str(self.out_dir),
                "model_dir": str(self.model_dir),
                "store": str(self.resolved_store_path()),
            },
            "scenario": self.scenario.to_dict(),
            "window": {"lag": self.window.lag, "target_column": self.window.target_column},
            "horizons": list(self.horizons),
            "split": {
                "train_frac": self.split.train_frac,
                "val_frac": self.split.val_frac,
                "test_frac": self.split.test_frac,
            },
            "train": {
                "learning_rate": self.train.learning_rate,
                "batch_size": self.train.batch_size,
                "max_epochs": self.train.max_epochs,
                "patience": self.train.patience,
                "seed": self.train.seed,
                "loss": self.train.loss,
            },
            "monitor": {
                "rolling_window": self.monitor.rolling_window,
                "max_mae": self.monitor.max_mae,
                "min_r2": self.monitor.min_r2,
                "max_mape": self.monitor.max_mape,
                "cooldown": self.monitor.cooldown,
            },
            "n_trials": self.n_trials,
            "port": self.port,
        }


def _build(section: dict, defaults, ts_fields=()) -> dict:
    kwargs = dict(section)
    for name in ts_fields:
        if name in kwargs and isinstance(kwargs[name], str):
            kwargs[name] = parse_iso(kwargs[name])
    return kwargs


def load_config(path: Path | str | None) -> RunConfig:
    """Load a YAML config file; missing file or None yields pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except yaml.YAMLError as err:
        raise ValidationError(f"cannot parse config file {path}: {err}")
    if not isinstance(raw, dict):
        raise ValidationError(f"config file {path} must hold a mapping")

    try:
        paths = raw.get("paths", {})
        if "corpus_dir" in paths:
            cfg.corpus_dir = Path(paths["corpus_dir"])
        if "out_dir" in paths:
            cfg.out_dir = Path(paths["out_dir"])
        if "model_dir" in paths:
            cfg.model_dir = Path(paths["model_dir"])
        if "store" in paths:
            cfg.store_path = Path(paths["store"])

        if "scenario" in raw:
            kwargs = _build(raw["scenario"], cfg.scenario, ts_fields=("start_ts", "end_ts"))
            if "esi_mix" in kwargs:
                kwargs["esi_mix"] = tuple(kwargs["esi_mix"])
            cfg.scenario = replace(cfg.scenario, **kwargs)
        if "window" in raw:
            cfg.window = replace(cfg.window, **raw["window"])
        if "horizons" in raw:
            cfg.horizons = tuple(int(h) for h in raw["horizons"])
        if "split" in raw:
            cfg.split = replace(cfg.split, **raw["split"])
        if "train" in raw:
            cfg.train = replace(cfg.train, **raw["train"])
        if "search" in raw:
            search = dict(raw["search"])
            cfg.n_trials = int(search.pop("n_trials", cfg.n_trials))
            if "learning_rate_range" in search:
                search["learning_rate_range"] = tuple(search["learning_rate_range"])
            for key in ("batch_sizes", "kernel_sizes"):
                if key in search:
                    search[key] = tuple(search[key])
            cfg.search = replace(cfg.search, **search)
        if "monitor" in raw:
            cfg.monitor = replace(cfg.monitor, **raw["monitor"])
        serve = raw.get("serve", {})
        if "port" in serve:
            cfg.port = int(serve["port"])
        if "token" in serve:
            cfg.token = serve["token"]
    except TypeError as err:
        raise ValidationError(f"invalid config key in {path}: {err}")
    return cfg
