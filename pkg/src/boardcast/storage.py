"""Embedded file-backed store for the platform's logical tables.

SQLite is the reference backend: raw_encounters, raw_context, raw_inpatient,
hourly_features, forecasts, metric_snapshots, model_registry, retrain_jobs,
plus experiment bookkeeping. Tables are append-only except for job status
transitions and the registry's active flag. A single guarded connection
serves all activities (the platform runs one writer per table; API reads
share the same snapshot).
"""

from __future__ import annotations

import sqlite3
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import pandas as pd

from .errors import StorageConflictError, ValidationError
from .evaluation import MetricReport
from .features import FEATURE_COLUMNS, HourlyFeatureRow, _apply_dtypes
from .scenario import ContextRecord, EncounterRecord, InpatientEvent
from .timeutils import HOUR, iso, parse_iso


@dataclass(frozen=True)
class ForecastRecord:
    origin_ts: datetime
    horizon: int
    target_ts: datetime
    predicted_minutes: float
    model_id: str
    created_ts: datetime

    def check_invariants(self) -> None:
        assert self.target_ts - self.origin_ts == self.horizon * HOUR
        assert self.predicted_minutes >= 0


@dataclass(frozen=True)
class ModelRegistryEntry:
    model_id: str
    model_name: str
    algorithm: str
    horizon: int
    train_start: datetime | None
    train_end: datetime | None
    mae: float
    rmse: float
    r2: float | None
    mape: float | None
    artifact_path: str
    registered_ts: datetime
    active: bool
    job_id: str | None = None


@dataclass(frozen=True)
class RetrainJob:
    job_id: str
    trigger: str  # threshold | scheduled | manual
    algorithm: str
    horizon: int
    range_start: datetime | None
    range_end: datetime | None
    status: str  # queued | running | done | failed
    enqueued_ts: datetime
    started_ts: datetime | None = None
    finished_ts: datetime | None = None
    result_model_id: str | None = None
    error: str | None = None
    dedup_key: str | None = None


_SCHEMA = """
CREATE TABLE IF NOT EXISTS raw_encounters (
    visit_id TEXT PRIMARY KEY,
    patient_id TEXT NOT NULL,
    esi INTEGER NOT NULL,
    arrival_ts TEXT NOT NULL,
    treatment_start_ts TEXT NOT NULL,
    bed_request_ts TEXT,
    checkout_ts TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_encounters_arrival ON raw_encounters(arrival_ts);

CREATE TABLE IF NOT EXISTS raw_context (
    hour_ts TEXT PRIMARY KEY,
    temperature REAL NOT NULL,
    weather_category TEXT NOT NULL,
    holiday INTEGER NOT NULL,
    football_a INTEGER NOT NULL,
    football_b INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS raw_inpatient (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    event_kind TEXT NOT NULL,
    ts TEXT NOT NULL,
    unit_id TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_inpatient_ts ON raw_inpatient(ts);

CREATE TABLE IF NOT EXISTS hourly_features (
    hour_ts TEXT PRIMARY KEY,
    {feature_columns}
);

CREATE TABLE IF NOT EXISTS forecasts (
    origin_ts TEXT NOT NULL,
    horizon INTEGER NOT NULL,
    target_ts TEXT NOT NULL,
    predicted_minutes REAL NOT NULL,
    model_id TEXT NOT NULL,
    created_ts TEXT NOT NULL,
    PRIMARY KEY (origin_ts, horizon)
);
CREATE INDEX IF NOT EXISTS idx_forecasts_target ON forecasts(target_ts);

CREATE TABLE IF NOT EXISTS metric_snapshots (
    now_ts TEXT NOT NULL,
    horizon INTEGER NOT NULL,
    n INTEGER NOT NULL,
    mae REAL,
    rmse REAL,
    r2 REAL,
    mape REAL,
    PRIMARY KEY (now_ts, horizon)
);

CREATE TABLE IF NOT EXISTS model_registry (
    model_id TEXT PRIMARY KEY,
    model_name TEXT NOT NULL,
    algorithm TEXT NOT NULL,
    horizon INTEGER NOT NULL,
    train_start TEXT,
    train_end TEXT,
    mae REAL NOT NULL,
    rmse REAL NOT NULL,
    r2 REAL,
    mape REAL,
    artifact_path TEXT NOT NULL,
    registered_ts TEXT NOT NULL,
    active INTEGER NOT NULL DEFAULT 0,
    job_id TEXT UNIQUE
);

CREATE TABLE IF NOT EXISTS retrain_jobs (
    job_id TEXT PRIMARY KEY,
    dedup_key TEXT UNIQUE,
    trigger TEXT NOT NULL,
    algorithm TEXT NOT NULL,
    horizon INTEGER NOT NULL,
    range_start TEXT,
    range_end TEXT,
    status TEXT NOT NULL,
    enqueued_ts TEXT NOT NULL,
    started_ts TEXT,
    finished_ts TEXT,
    result_model_id TEXT,
    error TEXT
);

CREATE TABLE IF NOT EXISTS experiments (
    experiment_id TEXT PRIMARY KEY,
    status TEXT NOT NULL,
    created_ts TEXT NOT NULL,
    request_json TEXT NOT NULL,
    result_json TEXT
);

CREATE TABLE IF NOT EXISTS experiment_log (
    experiment_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    line TEXT NOT NULL,
    PRIMARY KEY (experiment_id, seq)
);
""".format(
    feature_columns=",\n    ".join(
        f"{c} {'REAL' if c in ('boarding_time_minute_hourly', 'waiting_time_minute_hourly', 'treatment_time_minute_hourly', 'temperature') else 'INTEGER'} NOT NULL"
        for c in FEATURE_COLUMNS
    )
)

_VALID_JOB_TRANSITIONS = {
    ("queued", "running"),
    ("running", "done"),
    ("running", "failed"),
}


class Store:
    """Thread-safe facade over the SQLite file (or :memory: for tests)."""

    def __init__(self, path: Path | str = ":memory:"):
        self.path = str(path)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- raw records ----------------------------------------------------

    def insert_encounters(self, records: list[EncounterRecord]) -> None:
        rows = [
            (
                e.visit_id, e.patient_id, e.esi, iso(e.arrival_ts),
                iso(e.treatment_start_ts),
                iso(e.bed_request_ts) if e.bed_request_ts else None,
                iso(e.checkout_ts),
            )
            for e in records
        ]
        with self._lock, self._conn:
            self._conn.executemany(
                "INSERT OR IGNORE INTO raw_encounters VALUES (?,?,?,?,?,?,?)",
                [(r[0], r[1], r[2], r[3], r[4], r[5], r[6]) for r in rows],
            )

    def latest_encounters(self, n: int = 10) -> list[EncounterRecord]:
        with self._lock:
            cur = self._conn.execute(
                "SELECT * FROM raw_encounters ORDER BY arrival_ts DESC, visit_id DESC LIMIT ?",
                (n,),
            )
            rows = cur.fetchall()
        return [
            EncounterRecord(
                patient_id=r["patient_id"],
                visit_id=r["visit_id"],
                esi=r["esi"],
                arrival_ts=parse_iso(r["arrival_ts"]),
                treatment_start_ts=parse_iso(r["treatment_start_ts"]),
                bed_request_ts=parse_iso(r["bed_request_ts"]) if r["bed_request_ts"] else None,
                checkout_ts=parse_iso(r["checkout_ts"]),
            )
            for r in rows
        ]

    def count_encounters(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM raw_encounters").fetchone()[0]

    def insert_context(self, records: list[ContextRecord]) -> None:
        with self._lock, self._conn:
            self._conn.executemany(
                "INSERT OR IGNORE INTO raw_context VALUES (?,?,?,?,?,?)",
                [
                    (
                        iso(c.hour_ts), c.temperature, c.weather_category,
                        c.holiday, c.football_a, c.football_b,
                    )
                    for c in records
                ],
            )

    def insert_inpatient(self, events: list[InpatientEvent]) -> None:
        with self._lock, self._conn:
            self._conn.executemany(
                "INSERT INTO raw_inpatient (event_kind, ts, unit_id) VALUES (?,?,?)",
                [(ev.event_kind, iso(ev.ts), ev.unit_id) for ev in events],
            )

    # -- hourly features --------------------------------------------------

    def insert_feature_row(self, row: HourlyFeatureRow) -> None:
        values = [iso(row.hour_ts)] + [getattr(row, c) for c in FEATURE_COLUMNS]
        placeholders = ",".join("?" for _ in values)
        try:
            with self._lock, self._conn:
                self._conn.execute(
                    f"INSERT INTO hourly_features VALUES ({placeholders})", values
                )
        except sqlite3.IntegrityError as err:
            raise StorageConflictError(
                f"hour {iso(row.hour_ts)} already present in hourly_features"
            ) from err

    def insert_feature_table(self, table: pd.DataFrame) -> None:
        for row in table.itertuples(index=False):
            values = [iso(row.hour_ts)] + [getattr(row, c) for c in FEATURE_COLUMNS]
            placeholders = ",".join("?" for _ in values)
            try:
                with self._lock, self._conn:
                    self._conn.execute(
                        f"INSERT INTO hourly_features VALUES ({placeholders})",
                        [v.item() if hasattr(v, "item") else v for v in values],
                    )
            except sqlite3.IntegrityError as err:
                raise StorageConflictError(
                    f"hour {values[0]} already present in hourly_features"
                ) from err

    def query_features(
        self, start: datetime | None = None, end: datetime | None = None
    ) -> pd.DataFrame:
        """Feature rows with start <= hour_ts < end, ordered by hour_ts."""
        clauses, args = [], []
        if start is not None:
            clauses.append("hour_ts >= ?")
            args.append(iso(start))
        if end is not None:
            clauses.append("hour_ts < ?")
            args.append(iso(end))
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._lock:
            cur = self._conn.execute(
                f"SELECT * FROM hourly_features{where} ORDER BY hour_ts", args
            )
            rows = cur.fetchall()
        return self._feature_frame(rows)

    def latest_feature_rows(self, n: int) -> pd.DataFrame:
        with self._lock:
            cur = self._conn.execute(
                "SELECT * FROM hourly_features ORDER BY hour_ts DESC LIMIT ?", (n,)
            )
            rows = list(reversed(cur.fetchall()))
        return self._feature_frame(rows)

    @staticmethod
    def _feature_frame(rows) -> pd.DataFrame:
        if not rows:
            from .features import empty_table

            return empty_table()
        data = [dict(r) for r in rows]
        df = pd.DataFrame(data)
        df["hour_ts"] = [parse_iso(v) for v in df["hour_ts"]]
        return _apply_dtypes(df[["hour_ts"] + FEATURE_COLUMNS])

    def last_feature_hour(self) -> datetime | None:
        with self._lock:
            row = self._conn.execute("SELECT MAX(hour_ts) FROM hourly_features").fetchone()
        return parse_iso(row[0]) if row[0] else None

    def count_features(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) FROM hourly_features").fetchone()[0]

    def feature_value(self, hour_ts: datetime, column: str) -> float | None:
        if column not in FEATURE_COLUMNS:
            raise ValidationError(f"unknown feature column {column!r}")
        with self._lock:
            row = self._conn.execute(
                f"SELECT {column} FROM hourly_features WHERE hour_ts = ?", (iso(hour_ts),)
            ).fetchone()
        return None if row is None else row[0]

    # -- forecasts --------------------------------------------------------

    def insert_forecasts(self, records: list[ForecastRecord]) -> None:
        with self._lock, self._conn:
            self._conn.executemany(
                "INSERT OR REPLACE INTO forecasts VALUES (?,?,?,?,?,?)",
                [
                    (
                        iso(f.origin_ts), f.horizon, iso(f.target_ts),
                        f.predicted_minutes, f.model_id, iso(f.created_ts),
                    )
                    for f in records
                ],
            )

    def query_forecasts(
        self,
        horizon: int | None = None,
        target_from: datetime | None = None,
        target_to: datetime | None = None,
    ) -> list[ForecastRecord]:
        clauses, args = [], []
        if horizon is not None:
            clauses.append("horizon = ?")
            args.append(horizon)
        if target_from is not None:
            clauses.append("target_ts >= ?")
            args.append(iso(target_from))
        if target_to is not None:
            clauses.append("target_ts <= ?")
            args.append(iso(target_to))
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._lock:
            rows = self._conn.execute(
                f"SELECT * FROM forecasts{where} ORDER BY target_ts, horizon", args
            ).fetchall()
        return [self._forecast_from_row(r) for r in rows]

    def latest_forecasts_by_horizon(self) -> dict[int, ForecastRecord]:
        with self._lock:
            rows = self._conn.execute(
                """
                SELECT f.* FROM forecasts f
                JOIN (SELECT horizon, MAX(origin_ts) AS o FROM forecasts GROUP BY horizon) m
                ON f.horizon = m.horizon AND f.origin_ts = m.o
                """
            ).fetchall()
        return {r["horizon"]: self._forecast_from_row(r) for r in rows}

    @staticmethod
    def _forecast_from_row(r) -> ForecastRecord:
        return ForecastRecord(
            origin_ts=parse_iso(r["origin_ts"]),
            horizon=r["horizon"],
            target_ts=parse_iso(r["target_ts"]),
            predicted_minutes=r["predicted_minutes"],
            model_id=r["model_id"],
            created_ts=parse_iso(r["created_ts"]),
        )

    # -- metric snapshots ---------------------------------------------------

    def insert_metric_snapshot(self, now: datetime, horizon: int, report: MetricReport) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO metric_snapshots VALUES (?,?,?,?,?,?,?)",
                (
                    iso(now), horizon, report.n, report.mae, report.rmse,
                    report.r2, report.mape,
                ),
            )

    def metric_snapshots(self, horizon: int | None = None) -> list[tuple[datetime, int, MetricReport]]:
        clause = " WHERE horizon = ?" if horizon is not None else ""
        args = (horizon,) if horizon is not None else ()
        with self._lock:
            rows = self._conn.execute(
                f"SELECT * FROM metric_snapshots{clause} ORDER BY now_ts, horizon", args
            ).fetchall()
        out = []
        for r in rows:
            report = MetricReport(
                mae=r["mae"], rmse=r["rmse"], r2=r["r2"], mape=r["mape"], n=r["n"]
            )
            out.append((parse_iso(r["now_ts"]), r["horizon"], report))
        return out

    # -- model registry -----------------------------------------------------

    def register_model(self, entry: ModelRegistryEntry) -> None:
        """Insert a registry row; keyed by job_id for idempotent retries."""
        if entry.job_id is not None and self.entry_for_job(entry.job_id) is not None:
            return
        try:
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT INTO model_registry VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                    (
                        entry.model_id, entry.model_name, entry.algorithm, entry.horizon,
                        iso(entry.train_start) if entry.train_start else None,
                        iso(entry.train_end) if entry.train_end else None,
                        entry.mae, entry.rmse, entry.r2, entry.mape,
                        entry.artifact_path, iso(entry.registered_ts),
                        int(entry.active), entry.job_id,
                    ),
                )
                if entry.active:
                    self._conn.execute(
                        "UPDATE model_registry SET active = 0 WHERE horizon = ? AND model_id != ?",
                        (entry.horizon, entry.model_id),
                    )
        except sqlite3.IntegrityError as err:
            raise StorageConflictError(f"model {entry.model_id} already registered") from err

    def activate_model(self, model_id: str) -> None:
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT horizon FROM model_registry WHERE model_id = ?", (model_id,)
            ).fetchone()
            if row is None:
                raise ValidationError(f"unknown model {model_id}")
            self._conn.execute(
                "UPDATE model_registry SET active = 0 WHERE horizon = ?", (row["horizon"],)
            )
            self._conn.execute(
                "UPDATE model_registry SET active = 1 WHERE model_id = ?", (model_id,)
            )

    def active_model(self, horizon: int) -> ModelRegistryEntry | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM model_registry WHERE horizon = ? AND active = 1", (horizon,)
            ).fetchone()
        return self._registry_from_row(row) if row else None

    def entry_for_job(self, job_id: str) -> ModelRegistryEntry | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM model_registry WHERE job_id = ?", (job_id,)
            ).fetchone()
        return self._registry_from_row(row) if row else None

    def list_models(self) -> list[ModelRegistryEntry]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM model_registry ORDER BY horizon, registered_ts"
            ).fetchall()
        return [self._registry_from_row(r) for r in rows]

    @staticmethod
    def _registry_from_row(r) -> ModelRegistryEntry:
        return ModelRegistryEntry(
            model_id=r["model_id"],
            model_name=r["model_name"],
            algorithm=r["algorithm"],
            horizon=r["horizon"],
            train_start=parse_iso(r["train_start"]) if r["train_start"] else None,
            train_end=parse_iso(r["train_end"]) if r["train_end"] else None,
            mae=r["mae"],
            rmse=r["rmse"],
            r2=r["r2"],
            mape=r["mape"],
            artifact_path=r["artifact_path"],
            registered_ts=parse_iso(r["registered_ts"]),
            active=bool(r["active"]),
            job_id=r["job_id"],
        )

    # -- retrain job queue ---------------------------------------------------

    def enqueue_job(
        self,
        trigger: str,
        algorithm: str,
        horizon: int,
        range_start: datetime | None,
        range_end: datetime | None,
        enqueued_ts: datetime,
        dedup_key: str | None = None,
    ) -> RetrainJob | None:
        """Queue a retrain job; returns None when dedup_key already exists."""
        job_id = uuid.uuid4().hex[:12]
        with self._lock, self._conn:
            if dedup_key is not None:
                row = self._conn.execute(
                    "SELECT job_id FROM retrain_jobs WHERE dedup_key = ?", (dedup_key,)
                ).fetchone()
                if row is not None:
                    return None
            self._conn.execute(
                "INSERT INTO retrain_jobs (job_id, dedup_key, trigger, algorithm, horizon,"
                " range_start, range_end, status, enqueued_ts) VALUES (?,?,?,?,?,?,?,?,?)",
                (
                    job_id, dedup_key, trigger, algorithm, horizon,
                    iso(range_start) if range_start else None,
                    iso(range_end) if range_end else None,
                    "queued", iso(enqueued_ts),
                ),
            )
        return self.job(job_id)

    def claim_next_job(self, started_ts: datetime) -> RetrainJob | None:
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT job_id FROM retrain_jobs WHERE status = 'queued'"
                " ORDER BY enqueued_ts, job_id LIMIT 1"
            ).fetchone()
            if row is None:
                return None
            self._set_job_status(row["job_id"], "running", started_ts=started_ts)
        return self.job(row["job_id"])

    def finish_job(
        self,
        job_id: str,
        status: str,
        finished_ts: datetime,
        result_model_id: str | None = None,
        error: str | None = None,
    ) -> None:
        if status not in ("done", "failed"):
            raise ValidationError(f"invalid terminal job status {status!r}")
        if status == "done" and not result_model_id:
            raise ValidationError("done jobs must carry a result model id")
        with self._lock, self._conn:
            self._set_job_status(
                job_id, status, finished_ts=finished_ts,
                result_model_id=result_model_id, error=error,
            )

    def _set_job_status(self, job_id: str, status: str, started_ts=None,
                        finished_ts=None, result_model_id=None, error=None) -> None:
        row = self._conn.execute(
            "SELECT status FROM retrain_jobs WHERE job_id = ?", (job_id,)
        ).fetchone()
        if row is None:
            raise ValidationError(f"unknown job {job_id}")
        if (row["status"], status) not in _VALID_JOB_TRANSITIONS:
            raise ValidationError(
                f"invalid job transition {row['status']} -> {status} for {job_id}"
            )
        self._conn.execute(
            "UPDATE retrain_jobs SET status = ?,"
            " started_ts = COALESCE(?, started_ts),"
            " finished_ts = COALESCE(?, finished_ts),"
            " result_model_id = COALESCE(?, result_model_id),"
            " error = COALESCE(?, error)"
            " WHERE job_id = ?",
            (
                status,
                iso(started_ts) if started_ts else None,
                iso(finished_ts) if finished_ts else None,
                result_model_id, error, job_id,
            ),
        )

    def job(self, job_id: str) -> RetrainJob | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM retrain_jobs WHERE job_id = ?", (job_id,)
            ).fetchone()
        return self._job_from_row(row) if row else None

    def list_jobs(self, trigger: str | None = None, status: str | None = None) -> list[RetrainJob]:
        clauses, args = [], []
        if trigger is not None:
            clauses.append("trigger = ?")
            args.append(trigger)
        if status is not None:
            clauses.append("status = ?")
            args.append(status)
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._lock:
            rows = self._conn.execute(
                f"SELECT * FROM retrain_jobs{where} ORDER BY enqueued_ts, job_id", args
            ).fetchall()
        return [self._job_from_row(r) for r in rows]

    def last_trigger_ts(self, trigger: str, horizon: int) -> datetime | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT MAX(enqueued_ts) FROM retrain_jobs WHERE trigger = ? AND horizon = ?",
                (trigger, horizon),
            ).fetchone()
        return parse_iso(row[0]) if row[0] else None

    @staticmethod
    def _job_from_row(r) -> RetrainJob:
        return RetrainJob(
            job_id=r["job_id"],
            trigger=r["trigger"],
            algorithm=r["algorithm"],
            horizon=r["horizon"],
            range_start=parse_iso(r["range_start"]) if r["range_start"] else None,
            range_end=parse_iso(r["range_end"]) if r["range_end"] else None,
            status=r["status"],
            enqueued_ts=parse_iso(r["enqueued_ts"]),
            started_ts=parse_iso(r["started_ts"]) if r["started_ts"] else None,
            finished_ts=parse_iso(r["finished_ts"]) if r["finished_ts"] else None,
            result_model_id=r["result_model_id"],
            error=r["error"],
            dedup_key=r["dedup_key"],
        )

    # -- experiments -----------------------------------------------------------

    def create_experiment(self, request_json: str, created_ts: datetime) -> str:
        experiment_id = uuid.uuid4().hex[:12]
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO experiments (experiment_id, status, created_ts, request_json)"
                " VALUES (?,?,?,?)",
                (experiment_id, "running", iso(created_ts), request_json),
            )
        return experiment_id

    def set_experiment_status(self, experiment_id: str, status: str, result_json: str | None = None) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE experiments SET status = ?, result_json = COALESCE(?, result_json)"
                " WHERE experiment_id = ?",
                (status, result_json, experiment_id),
            )

    def experiment(self, experiment_id: str) -> dict | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM experiments WHERE experiment_id = ?", (experiment_id,)
            ).fetchone()
        return dict(row) if row else None

    def append_experiment_log(self, experiment_id: str, line: str) -> None:
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) FROM experiment_log WHERE experiment_id = ?",
                (experiment_id,),
            ).fetchone()
            self._conn.execute(
                "INSERT INTO experiment_log VALUES (?,?,?)",
                (experiment_id, row[0] + 1, line),
            )

    def experiment_log(self, experiment_id: str, after: int = -1) -> list[tuple[int, str]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT seq, line FROM experiment_log WHERE experiment_id = ? AND seq > ?"
                " ORDER BY seq",
                (experiment_id, after),
            ).fetchall()
        return [(r["seq"], r["line"]) for r in rows]
