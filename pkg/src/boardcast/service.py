"""Platform service: stream replay, forecasting, monitoring, and retraining.

The replay loop advances a simulated clock over a loaded corpus, emitting
raw records into the store as their timestamps pass and aggregating each
hour the moment it completes (the 09:00-10:00 hour is computed at 10:00,
never earlier). Each completed hour drives one monitoring cycle: forecast at
every horizon, mature and score pending forecasts over a rolling window,
fire threshold retrain jobs on breaches, and enqueue the monthly scheduled
batch on month rollovers. The retrain worker drains the job queue through
the shared pipeline and registers results, activating a new model only when
its validation MAE beats the incumbent's.

Everything takes the clock as data, so the whole platform is testable with
no wall-clock waits.
"""

from __future__ import annotations

import json
import threading
import traceback
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .dataset import SplitSpec, WindowSpec
from .errors import (
    BoardcastError,
    InsufficientDataError,
    MissingModelError,
    ValidationError,
)
from .evaluation import MetricReport, compute_metrics
from .features import (
    FEATURE_COLUMNS,
    TARGET_COLUMN,
    HourAggregator,
    HourlyFeatureRow,
    clean_encounters,
)
from .models import FittedModel, TrainConfig, predict
from .pipeline import ALGORITHM_LABELS, PreparedData, train_model
from .scenario import ContextRecord, Corpus, EncounterRecord, InpatientEvent
from .storage import ForecastRecord, ModelRegistryEntry, RetrainJob, Store
from .timeutils import HOUR, floor_hour, iso

HORIZONS = (6, 8, 10, 12, 24)


@dataclass(frozen=True)
class MonitorConfig:
    rolling_window: int = 168       # hours
    max_mae: float = 150.0          # minutes
    min_r2: float = 0.4
    max_mape: float = 30.0          # percent
    cooldown: int = 24              # hours between threshold triggers per horizon

    def validate(self) -> None:
        if self.rolling_window < 1:
            raise ValidationError("rolling_window must be >= 1")
        if self.cooldown < 0:
            raise ValidationError("cooldown must be >= 0")


@dataclass
class ReplayState:
    simulated_clock: datetime
    encounter_cursor: int = 0
    inpatient_cursor: int = 0
    context_cursor: int = 0
    last_aggregated_hour: datetime | None = None
    exhausted: bool = False


@dataclass
class TickResult:
    clock: datetime
    encounters: list[EncounterRecord] = field(default_factory=list)
    inpatient: list[InpatientEvent] = field(default_factory=list)
    context: list[ContextRecord] = field(default_factory=list)
    rows: list[HourlyFeatureRow] = field(default_factory=list)
    end_of_stream: bool = False


class PlatformService:
    """Owns the store, the model artifacts, and the platform activities."""

    def __init__(
        self,
        store: Store,
        model_dir: Path | str,
        horizons: tuple[int, ...] = HORIZONS,
        monitor_config: MonitorConfig = MonitorConfig(),
        train_config: TrainConfig = TrainConfig(),
        window_spec: WindowSpec = WindowSpec(),
        split_spec: SplitSpec = SplitSpec(),
        clock=None,
    ):
        monitor_config.validate()
        self.store = store
        self.model_dir = Path(model_dir)
        self.model_dir.mkdir(parents=True, exist_ok=True)
        self.horizons = tuple(horizons)
        self.monitor_config = monitor_config
        self.train_config = train_config
        self.window_spec = window_spec
        self.split_spec = split_spec
        self._clock_override = clock
        self._model_cache: dict[str, FittedModel] = {}
        self._experiment_threads: dict[str, threading.Thread] = {}
        self.replay: ReplayState | None = None
        self._corpus: Corpus | None = None
        self._aggregator: HourAggregator | None = None

    # -- clock ------------------------------------------------------------

    def now(self) -> datetime:
        if self._clock_override is not None:
            return self._clock_override()
        if self.replay is not None:
            return self.replay.simulated_clock
        return datetime.now(timezone.utc)

    # -- replay -----------------------------------------------------------

    def load_corpus(self, corpus: Corpus) -> None:
        """Prepare a corpus for replay; anomalous visits are filtered at ingest."""
        kept, _ = clean_encounters(corpus.encounters)
        self._corpus = Corpus(
            config=corpus.config,
            encounters=sorted(kept, key=lambda e: (e.arrival_ts, e.visit_id)),
            context=sorted(corpus.context, key=lambda c: c.hour_ts),
            inpatient=sorted(corpus.inpatient, key=lambda ev: ev.ts),
        )
        self._aggregator = HourAggregator(
            self._corpus.encounters, self._corpus.inpatient, self._corpus.context
        )
        self.replay = ReplayState(simulated_clock=corpus.config.start_ts)

    def replay_tick(self, step: timedelta = HOUR) -> TickResult:
        """Advance the simulated clock, emit due events, aggregate completed hours."""
        if self.replay is None or self._corpus is None:
            raise ValidationError("no corpus loaded for replay")
        if step <= timedelta(0):
            raise ValidationError("step must be positive")
        state = self.replay
        corpus = self._corpus
        end_ts = corpus.config.end_ts

        new_clock = state.simulated_clock + step
        result = TickResult(clock=new_clock)

        while (
            state.encounter_cursor < len(corpus.encounters)
            and corpus.encounters[state.encounter_cursor].arrival_ts <= new_clock
        ):
            result.encounters.append(corpus.encounters[state.encounter_cursor])
            state.encounter_cursor += 1
        while (
            state.inpatient_cursor < len(corpus.inpatient)
            and corpus.inpatient[state.inpatient_cursor].ts <= new_clock
        ):
            result.inpatient.append(corpus.inpatient[state.inpatient_cursor])
            state.inpatient_cursor += 1
        while (
            state.context_cursor < len(corpus.context)
            and corpus.context[state.context_cursor].hour_ts <= new_clock
        ):
            result.context.append(corpus.context[state.context_cursor])
            state.context_cursor += 1

        if result.encounters:
            self.store.insert_encounters(result.encounters)
        if result.inpatient:
            self.store.insert_inpatient(result.inpatient)
        if result.context:
            self.store.insert_context(result.context)

        # Aggregate every hour whose end has passed; never an incomplete hour.
        next_hour = (
            state.last_aggregated_hour + HOUR
            if state.last_aggregated_hour is not None
            else corpus.config.start_ts
        )
        while next_hour + HOUR <= new_clock and next_hour < end_ts:
            row = self._aggregator.row(next_hour, visible_encounters=state.encounter_cursor)
            self.store.insert_feature_row(row)
            result.rows.append(row)
            state.last_aggregated_hour = next_hour
            next_hour = next_hour + HOUR

        state.simulated_clock = new_clock
        if new_clock >= end_ts and state.last_aggregated_hour == end_ts - HOUR:
            state.exhausted = True
            result.end_of_stream = True
        return result

    def run_replay(
        self,
        step: timedelta = HOUR,
        monitor: bool = False,
        run_worker: bool = False,
        max_hours: int | None = None,
    ) -> int:
        """Replay the loaded corpus to exhaustion; returns rows aggregated."""
        rows = 0
        while self.replay is not None and not self.replay.exhausted:
            result = self.replay_tick(step)
            for row in result.rows:
                rows += 1
                if monitor:
                    self.monitoring_cycle(row.hour_ts)
                    if run_worker:
                        self.run_retrain_worker()
                if max_hours is not None and rows >= max_hours:
                    return rows
            if result.end_of_stream:
                break
        return rows

    # -- forecasting --------------------------------------------------------

    def load_model(self, entry: ModelRegistryEntry) -> FittedModel:
        if entry.model_id not in self._model_cache:
            self._model_cache[entry.model_id] = FittedModel.load(entry.artifact_path)
        return self._model_cache[entry.model_id]

    def _serving_window(self, model: FittedModel) -> tuple[np.ndarray, datetime]:
        """(d, L) unscaled window from the latest stored rows, plus its origin."""
        L = model.config.lag
        rows = self.store.latest_feature_rows(L)
        if len(rows) < L:
            raise InsufficientDataError(
                f"need {L} hours of history, have {len(rows)}"
            )
        ts = list(rows["hour_ts"])
        for a, b in zip(ts, ts[1:]):
            if b - a != HOUR:
                raise InsufficientDataError(
                    f"history gap between {iso(a)} and {iso(b)} inside the lag window"
                )
        frame = rows[model.columns].astype(np.float64)
        if "extreme_boarding_indicator" in model.columns:
            if model.extreme_mean is None or model.extreme_sd is None:
                raise ValidationError("model lacks extreme statistics for serving")
            threshold = model.extreme_mean + model.extreme_sd
            frame = frame.copy()
            frame["extreme_boarding_indicator"] = (
                rows[TARGET_COLUMN].to_numpy(dtype=np.float64) > threshold
            ).astype(np.float64)
        window = frame.to_numpy(dtype=np.float64).T  # (d, L)
        return window, ts[-1].to_pydatetime()

    def forecast_all_horizons(self) -> list[ForecastRecord]:
        """One forecast per horizon from each horizon's active model.

        Horizons with models are forecast and persisted even when others are
        missing; a MissingModelError carrying the partial records is then
        raised so callers see exactly which horizons lack a model.
        """
        records: list[ForecastRecord] = []
        missing: list[int] = []
        created = self.now()
        for horizon in self.horizons:
            entry = self.store.active_model(horizon)
            if entry is None:
                missing.append(horizon)
                continue
            model = self.load_model(entry)
            window, origin = self._serving_window(model)
            minutes = predict(model, window)
            records.append(
                ForecastRecord(
                    origin_ts=origin,
                    horizon=horizon,
                    target_ts=origin + horizon * HOUR,
                    predicted_minutes=minutes,
                    model_id=entry.model_id,
                    created_ts=created,
                )
            )
        if records:
            self.store.insert_forecasts(records)
        if missing:
            err = MissingModelError(
                f"no active model for horizons {missing}", horizons=missing
            )
            err.records = records
            raise err
        return records

    # -- monitoring -----------------------------------------------------------

    def mature_and_score(self, now: datetime) -> dict[int, MetricReport | None]:
        """Rolling-window metrics per horizon over forecasts whose hour has landed."""
        window_start = now - self.monitor_config.rolling_window * HOUR
        reports: dict[int, MetricReport | None] = {}
        for horizon in self.horizons:
            matured = self.store.query_forecasts(
                horizon=horizon, target_from=window_start + HOUR, target_to=now
            )
            y, yhat = [], []
            for fc in matured:
                observed = self.store.feature_value(fc.target_ts, TARGET_COLUMN)
                if observed is not None:
                    y.append(observed)
                    yhat.append(fc.predicted_minutes)
            if not y:
                reports[horizon] = None
                continue
            report = compute_metrics(np.array(y), np.array(yhat))
            reports[horizon] = report
            self.store.insert_metric_snapshot(now, horizon, report)
        return reports

    def monitor_and_trigger(
        self, reports: dict[int, MetricReport | None], now: datetime
    ) -> list[RetrainJob]:
        """Enqueue one threshold retrain job per breached horizon, respecting cooldown."""
        cfg = self.monitor_config
        jobs = []
        for horizon, report in sorted(reports.items()):
            if report is None:
                continue
            breached = report.mae > cfg.max_mae
            if report.r2 is not None and report.r2 < cfg.min_r2:
                breached = True
            if report.mape is not None and report.mape > cfg.max_mape:
                breached = True
            if not breached:
                continue
            last = self.store.last_trigger_ts("threshold", horizon)
            if last is not None and now - last < cfg.cooldown * HOUR:
                continue
            entry = self.store.active_model(horizon)
            algorithm = entry.algorithm if entry else "nlinear"
            job = self.store.enqueue_job(
                trigger="threshold",
                algorithm=algorithm,
                horizon=horizon,
                range_start=None,
                range_end=now + HOUR,
                enqueued_ts=now,
                dedup_key=f"threshold:{horizon}:{iso(now)}",
            )
            if job is not None:
                jobs.append(job)
        return jobs

    def schedule_monthly(self, now: datetime) -> list[RetrainJob]:
        """First cycle of each calendar month: one scheduled job per horizon,
        covering data up to the previous month's end."""
        month_start = floor_hour(now).replace(day=1, hour=0)
        month_key = f"{now.year:04d}-{now.month:02d}"
        jobs = []
        for horizon in self.horizons:
            entry = self.store.active_model(horizon)
            algorithm = entry.algorithm if entry else "nlinear"
            job = self.store.enqueue_job(
                trigger="scheduled",
                algorithm=algorithm,
                horizon=horizon,
                range_start=None,
                range_end=month_start,
                enqueued_ts=now,
                dedup_key=f"scheduled:{horizon}:{month_key}",
            )
            if job is not None:
                jobs.append(job)
        return jobs

    def monitoring_cycle(self, completed_hour: datetime) -> None:
        """The hourly loop body: forecast, score, trigger, schedule."""
        try:
            self.forecast_all_horizons()
        except (MissingModelError, InsufficientDataError):
            pass  # monitoring continues; the registry may fill in later
        reports = self.mature_and_score(completed_hour)
        self.monitor_and_trigger(reports, completed_hour)
        self.schedule_monthly(completed_hour)

    # -- retraining ---------------------------------------------------------

    def run_retrain_worker(self, max_jobs: int | None = None) -> list[RetrainJob]:
        """Drain queued jobs; each failure is recorded without touching the incumbent."""
        finished = []
        while max_jobs is None or len(finished) < max_jobs:
            job = self.store.claim_next_job(started_ts=self.now())
            if job is None:
                break
            self._execute_job(job)
            finished.append(self.store.job(job.job_id))
        return finished

    def _execute_job(self, job: RetrainJob) -> None:
        try:
            model_id = f"m-{job.job_id}"
            existing = self.store.entry_for_job(job.job_id)
            if existing is not None:
                # Redelivery of a job that already registered its model.
                self.store.finish_job(
                    job.job_id, "done", finished_ts=self.now(),
                    result_model_id=existing.model_id,
                )
                return
            table = self.store.query_features(job.range_start, job.range_end)
            if len(table) < 3:
                raise InsufficientDataError(
                    f"feature range has {len(table)} rows, cannot train"
                )
            prepared = PreparedData(
                table,
                WindowSpec(
                    lag=self.window_spec.lag,
                    horizon=job.horizon,
                    target_column=self.window_spec.target_column,
                ),
                self.split_spec,
            )
            if len(prepared.train) == 0 or len(prepared.val) == 0:
                raise InsufficientDataError("not enough rows for train/val windows")
            model = train_model(prepared, job.algorithm, self.train_config)
            artifact = self.model_dir / f"{model_id}.json"
            model.save(artifact)

            metrics = model.metrics
            incumbent = self.store.active_model(job.horizon)
            activate = incumbent is None or metrics["mae"] < incumbent.mae
            entry = ModelRegistryEntry(
                model_id=model_id,
                model_name=f"{job.horizon} hours - {ALGORITHM_LABELS[job.algorithm]}",
                algorithm=job.algorithm,
                horizon=job.horizon,
                train_start=model.train_start,
                train_end=model.train_end,
                mae=metrics["mae"],
                rmse=metrics["rmse"],
                r2=metrics["r2"],
                mape=metrics["mape"],
                artifact_path=str(artifact),
                registered_ts=self.now(),
                active=activate,
                job_id=job.job_id,
            )
            self.store.register_model(entry)
            self.store.finish_job(
                job.job_id, "done", finished_ts=self.now(), result_model_id=model_id
            )
        except BoardcastError as err:
            self.store.finish_job(
                job.job_id, "failed", finished_ts=self.now(), error=str(err)
            )
        except Exception as err:  # defensive: never wedge the queue
            self.store.finish_job(
                job.job_id, "failed", finished_ts=self.now(),
                error=f"{type(err).__name__}: {err}\n{traceback.format_exc(limit=3)}",
            )

    def register_trained_model(
        self, model: FittedModel, artifact_path: Path | str, activate: str = "if_better"
    ) -> ModelRegistryEntry:
        """Register an externally trained model (CLI train command)."""
        import uuid

        metrics = model.metrics or {}
        model_id = f"m-{uuid.uuid4().hex[:10]}"
        incumbent = self.store.active_model(model.horizon)
        if activate == "always":
            active = True
        elif activate == "never":
            active = False
        else:
            active = incumbent is None or metrics.get("mae", float("inf")) < incumbent.mae
        entry = ModelRegistryEntry(
            model_id=model_id,
            model_name=f"{model.horizon} hours - {ALGORITHM_LABELS[model.algorithm]}",
            algorithm=model.algorithm,
            horizon=model.horizon,
            train_start=model.train_start,
            train_end=model.train_end,
            mae=metrics.get("mae", float("nan")),
            rmse=metrics.get("rmse", float("nan")),
            r2=metrics.get("r2"),
            mape=metrics.get("mape"),
            artifact_path=str(artifact_path),
            registered_ts=self.now(),
            active=active,
            job_id=None,
        )
        self.store.register_model(entry)
        return entry

    # -- experiments ----------------------------------------------------------

    def start_experiment(self, request: dict, background: bool = True) -> str:
        """Kick off an experiment run; log lines stream into the store."""
        self._validate_experiment(request)
        experiment_id = self.store.create_experiment(
            json.dumps(request, sort_keys=True), created_ts=self.now()
        )
        if background:
            thread = threading.Thread(
                target=self._run_experiment, args=(experiment_id, request), daemon=True
            )
            self._experiment_threads[experiment_id] = thread
            thread.start()
        else:
            self._run_experiment(experiment_id, request)
        return experiment_id

    @staticmethod
    def _validate_experiment(request: dict) -> None:
        splits = request.get("splits", {})
        total = splits.get("train", 0) + splits.get("val", 0) + splits.get("test", 0)
        if abs(total - 100.0) > 1e-9:
            raise ValidationError(f"split percentages must sum to 100, got {total}")
        if request.get("lag", 24) < 1:
            raise ValidationError("lag must be >= 1")
        if request.get("horizon") not in HORIZONS:
            raise ValidationError(f"horizon must be one of {list(HORIZONS)}")
        if request.get("algorithm") not in ("nlinear", "dlinear"):
            raise ValidationError("algorithm must be nlinear or dlinear")
        if request.get("scaling", "standard") not in ("standard", "none"):
            raise ValidationError("scaling must be standard or none")

    def _run_experiment(self, experiment_id: str, request: dict) -> None:
        log = lambda line: self.store.append_experiment_log(experiment_id, line)
        try:
            log("Ready to train...")
            start = request.get("date_range", {}).get("from")
            end = request.get("date_range", {}).get("to")
            from .timeutils import parse_iso

            table = self.store.query_features(
                parse_iso(start) if start else None,
                parse_iso(end) if end else None,
            )
            log(f"dataset: {len(table)} hourly rows")
            features = request.get("features") or None
            target = request.get("target", TARGET_COLUMN)
            if features and target not in features:
                features = list(features) + [target]
            splits = request["splits"]
            prepared = PreparedData(
                table,
                WindowSpec(lag=request.get("lag", 24), horizon=request["horizon"],
                           target_column=target),
                SplitSpec(splits["train"] / 100, splits["val"] / 100, splits["test"] / 100),
                feature_columns=features,
                scaling=request.get("scaling", "standard"),
            )
            log(
                f"windows: train={len(prepared.train)} val={len(prepared.val)} "
                f"test={len(prepared.test)}"
            )
            if len(prepared.train) == 0 or len(prepared.val) == 0:
                raise InsufficientDataError("not enough rows for train/val windows")

            def on_epoch(epoch: int, train_loss: float, val_loss: float) -> bool:
                if epoch % 10 == 0 or epoch == 1:
                    log(f"epoch {epoch}: train_loss={train_loss:.6f} val_loss={val_loss:.6f}")
                return True

            from .models import train as train_fn
            from .models import DLinearConfig, NLinearConfig

            d = len(prepared.columns)
            if request["algorithm"] == "dlinear":
                kernel = min(25, prepared.window_spec.lag if prepared.window_spec.lag % 2 == 1
                             else prepared.window_spec.lag - 1)
                model_config = DLinearConfig(lag=prepared.window_spec.lag, channels=d,
                                             kernel_size=kernel)
            else:
                model_config = NLinearConfig(lag=prepared.window_spec.lag, channels=d)
            model = train_fn(model_config, self.train_config, prepared.train, prepared.val,
                             epoch_callback=on_epoch)
            model.scaler = prepared.scaler
            model.extreme_mean = prepared.extreme_mean
            model.extreme_sd = prepared.extreme_sd

            from .pipeline import predictions_minutes

            yhat = predictions_minutes(model, prepared.test, prepared.scaler)
            metrics = compute_metrics(prepared.test_unscaled.y, yhat)
            log(
                f"test metrics: MAE={metrics.mae:.1f} RMSE={metrics.rmse:.1f} "
                f"R2={'n/a' if metrics.r2 is None else f'{metrics.r2:.3f}'} "
                f"MAPE={'n/a' if metrics.mape is None else f'{metrics.mape:.1f}%'}"
            )
            artifact = self.model_dir / f"exp-{experiment_id}.json"
            model.metrics = {"split": "test", **metrics.to_dict()}
            model.save(artifact)
            log(f"model saved: {artifact.name}")
            self.store.set_experiment_status(
                experiment_id, "done", json.dumps(metrics.to_dict())
            )
        except Exception as err:
            log(f"error: {err}")
            self.store.set_experiment_status(experiment_id, "failed")

    def wait_for_experiment(self, experiment_id: str, timeout: float = 60.0) -> None:
        thread = self._experiment_threads.get(experiment_id)
        if thread is not None:
            thread.join(timeout)

    # -- read models for the API ------------------------------------------------

    def dashboard_data(self) -> dict:
        rows = self.store.latest_feature_rows(72)
        if len(rows) == 0:
            return {
                "current_hour": None,
                "current_boarding_time": None,
                "forecasts": [],
                "indicators": {},
                "history": {"observed": [], "forecast_trajectory": []},
            }
        latest = rows.iloc[-1]
        forecasts = self.store.latest_forecasts_by_horizon()
        ordered = [forecasts[h] for h in sorted(forecasts)]
        return {
            "current_hour": iso(latest["hour_ts"]),
            "current_boarding_time": float(latest[TARGET_COLUMN]),
            "forecasts": [
                {
                    "horizon": fc.horizon,
                    "origin_ts": iso(fc.origin_ts),
                    "target_ts": iso(fc.target_ts),
                    "predicted_minutes": fc.predicted_minutes,
                    "model_id": fc.model_id,
                }
                for fc in ordered
            ],
            "indicators": {
                "surgical": int(latest["surgical_count_hourly"]),
                "census": int(latest["census_count_hourly"]),
                "waiting": int(latest["waiting_count_hourly"]),
                "boarding": int(latest["boarding_count_hourly"]),
                "treatment": int(latest["treatment_count_hourly"]),
            },
            "history": {
                "observed": [
                    {"hour_ts": iso(r.hour_ts), "boarding_time": float(getattr(r, TARGET_COLUMN))}
                    for r in rows.itertuples(index=False)
                ],
                "forecast_trajectory": [
                    {
                        "target_ts": iso(fc.target_ts),
                        "predicted_minutes": fc.predicted_minutes,
                        "horizon": fc.horizon,
                    }
                    for fc in ordered
                ],
            },
        }

    def stream_recent(self, n: int = 10) -> dict:
        encounters = self.store.latest_encounters(n)
        rows = self.store.latest_feature_rows(1)
        latest_row = None
        if len(rows) == 1:
            record = rows.iloc[0]
            latest_row = {"hour_ts": iso(record["hour_ts"])}
            for c in FEATURE_COLUMNS:
                value = record[c]
                latest_row[c] = float(value) if isinstance(value, float) else int(value)
        return {
            "encounters": [
                {
                    "patient_id": e.patient_id,
                    "visit_id": e.visit_id,
                    "esi": e.esi,
                    "arrival_ts": iso(e.arrival_ts),
                    "treatment_start_ts": iso(e.treatment_start_ts),
                    "bed_request_ts": iso(e.bed_request_ts) if e.bed_request_ts else None,
                    "checkout_ts": iso(e.checkout_ts),
                }
                for e in encounters
            ],
            "latest_feature_row": latest_row,
        }
