"""Hourly feature engineering.

Turns cleaned encounter records, inpatient events, and hourly context into
the 30-column hourly feature table used for forecasting. State membership is
a snapshot at the end instant of each hour: the row for 09:00 describes who
was waiting / in treatment / boarding at exactly 10:00, so every feature is
computable the moment the hour completes (streaming and batch agree
bit-for-bit).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataGapError, DuplicateKeyError, ValidationError
from .scenario import ContextRecord, EncounterRecord, InpatientEvent
from .timeutils import (
    HOUR,
    epoch_seconds,
    hour_range,
    iso,
    require_hour_aligned,
    utc,
)

# Cleaning thresholds: strict inequalities, values in minutes.
MAX_WAIT_MINUTES = 540.0        # 9 hours
MAX_BOARD_MINUTES = 18_000.0    # 300 hours

# Hours removed by default (early COVID surge), [start, end).
DEFAULT_EXCLUSION = (utc(2020, 4, 1), utc(2020, 7, 1))

TEMPORAL_COLUMNS = ["year", "month", "day_of_month", "day_of_week", "hour"]
ED_COLUMNS = [
    "boarding_time_minute_hourly",
    "boarding_count_hourly",
    "boarding_count_esi12_hourly",
    "boarding_count_esi3_hourly",
    "boarding_count_esi45_hourly",
    "waiting_time_minute_hourly",
    "waiting_count_hourly",
    "waiting_count_esi12_hourly",
    "waiting_count_esi3_hourly",
    "waiting_count_esi45_hourly",
    "treatment_time_minute_hourly",
    "treatment_count_hourly",
    "total_patient_count_hourly",
    "extreme_boarding_indicator",
]
INPATIENT_COLUMNS = ["census_count_hourly", "surgical_count_hourly"]
WEATHER_COLUMNS = [
    "temperature",
    "weather_clear",
    "weather_clouds",
    "weather_rain",
    "weather_thunderstorm",
    "weather_other",
]
EVENT_COLUMNS = ["holiday", "football_a", "football_b"]

#: The 30 canonical feature columns, in fixed order (features.csv order).
FEATURE_COLUMNS = TEMPORAL_COLUMNS + ED_COLUMNS + INPATIENT_COLUMNS + WEATHER_COLUMNS + EVENT_COLUMNS

#: Columns exempt from standardization.
BINARY_COLUMNS = frozenset(
    ["extreme_boarding_indicator", "holiday", "football_a", "football_b"]
    + [c for c in WEATHER_COLUMNS if c.startswith("weather_")]
)

TARGET_COLUMN = "boarding_time_minute_hourly"

_FLOAT_COLUMNS = {
    "boarding_time_minute_hourly",
    "waiting_time_minute_hourly",
    "treatment_time_minute_hourly",
    "temperature",
}


@dataclass(frozen=True)
class HourlyFeatureRow:
    """One hour of aggregated ED / hospital / context state."""

    hour_ts: datetime
    year: int
    month: int
    day_of_month: int
    day_of_week: int
    hour: int
    boarding_time_minute_hourly: float
    boarding_count_hourly: int
    boarding_count_esi12_hourly: int
    boarding_count_esi3_hourly: int
    boarding_count_esi45_hourly: int
    waiting_time_minute_hourly: float
    waiting_count_hourly: int
    waiting_count_esi12_hourly: int
    waiting_count_esi3_hourly: int
    waiting_count_esi45_hourly: int
    treatment_time_minute_hourly: float
    treatment_count_hourly: int
    total_patient_count_hourly: int
    extreme_boarding_indicator: int
    census_count_hourly: int
    surgical_count_hourly: int
    temperature: float
    weather_clear: int
    weather_clouds: int
    weather_rain: int
    weather_thunderstorm: int
    weather_other: int
    holiday: int
    football_a: int
    football_b: int


@dataclass
class CleaningReport:
    n_input: int
    n_kept: int
    n_dropped_waiting: int
    n_dropped_boarding: int
    dropped_fraction_waiting: float  # percent of input
    excluded_hour_range: tuple[datetime, datetime] | None = None

    def to_dict(self) -> dict:
        gap = self.excluded_hour_range
        return {
            "n_input": self.n_input,
            "n_kept": self.n_kept,
            "n_dropped_waiting": self.n_dropped_waiting,
            "n_dropped_boarding": self.n_dropped_boarding,
            "dropped_fraction_waiting": self.dropped_fraction_waiting,
            "excluded_hour_range": [iso(gap[0]), iso(gap[1])] if gap else None,
        }


def wait_minutes(record: EncounterRecord) -> float:
    return (record.treatment_start_ts - record.arrival_ts).total_seconds() / 60.0


def board_minutes(record: EncounterRecord) -> float | None:
    if record.bed_request_ts is None:
        return None
    return (record.checkout_ts - record.bed_request_ts).total_seconds() / 60.0


def clean_encounters(
    records: list[EncounterRecord],
) -> tuple[list[EncounterRecord], CleaningReport]:
    """Drop anomalous visits: waits > 540 min or boarding > 18,000 min.

    Both thresholds are strict, so boundary values are kept. A record that
    violates both rules is tallied once, under the waiting rule.
    """
    kept = []
    n_wait = 0
    n_board = 0
    for rec in records:
        if wait_minutes(rec) > MAX_WAIT_MINUTES:
            n_wait += 1
            continue
        bm = board_minutes(rec)
        if bm is not None and bm > MAX_BOARD_MINUTES:
            n_board += 1
            continue
        kept.append(rec)
    n_input = len(records)
    report = CleaningReport(
        n_input=n_input,
        n_kept=len(kept),
        n_dropped_waiting=n_wait,
        n_dropped_boarding=n_board,
        dropped_fraction_waiting=(100.0 * n_wait / n_input) if n_input else 0.0,
    )
    return kept, report


class HourAggregator:
    """Vectorized per-hour aggregation over a corpus.

    Encounter timestamps are flattened to epoch-second arrays sorted by
    (arrival, visit_id), so one hour aggregates in a handful of numpy passes.
    ``row(hour_ts, visible_encounters=n)`` restricts aggregation to the first
    n arrival-ordered encounters; the replay loop uses this to aggregate only
    records that have already streamed in. Because every membership test
    implies arrival <= hour_end, batch (all records) and stream (prefix)
    aggregation of a completed hour produce identical rows.
    """

    def __init__(
        self,
        encounters: list[EncounterRecord],
        inpatient: list[InpatientEvent],
        context: list[ContextRecord],
    ):
        ordered = sorted(encounters, key=lambda e: (e.arrival_ts, e.visit_id))
        self.encounters = ordered
        n = len(ordered)
        self._arrival = np.empty(n)
        self._treat_start = np.empty(n)
        self._board_start = np.full(n, np.nan)
        self._in_ed_end = np.empty(n)      # checkout
        self._treat_end = np.empty(n)      # bed request if admitted, else checkout
        self._esi = np.empty(n, dtype=np.int64)
        for i, e in enumerate(ordered):
            self._arrival[i] = epoch_seconds(e.arrival_ts)
            self._treat_start[i] = epoch_seconds(e.treatment_start_ts)
            self._in_ed_end[i] = epoch_seconds(e.checkout_ts)
            if e.bed_request_ts is not None:
                self._board_start[i] = epoch_seconds(e.bed_request_ts)
                self._treat_end[i] = self._board_start[i]
            else:
                self._treat_end[i] = self._in_ed_end[i]
            # Records with an out-of-range acuity fall into the middle stratum.
            self._esi[i] = e.esi if 1 <= e.esi <= 5 else 3

        self._admissions = np.sort(
            np.array([epoch_seconds(ev.ts) for ev in inpatient if ev.event_kind == "admission"])
        )
        self._discharges = np.sort(
            np.array([epoch_seconds(ev.ts) for ev in inpatient if ev.event_kind == "discharge"])
        )
        self._surgery_starts = np.sort(
            np.array([epoch_seconds(ev.ts) for ev in inpatient if ev.event_kind == "surgery_start"])
        )
        self._surgery_ends = np.sort(
            np.array([epoch_seconds(ev.ts) for ev in inpatient if ev.event_kind == "surgery_end"])
        )

        self._context: dict[datetime, ContextRecord] = {}
        for rec in context:
            if rec.hour_ts in self._context:
                raise DuplicateKeyError(f"duplicate context record for hour {iso(rec.hour_ts)}")
            self._context[rec.hour_ts] = rec

    def arrivals_through(self, ts: datetime) -> int:
        """Number of encounters with arrival_ts <= ts (prefix length)."""
        return int(np.searchsorted(self._arrival, epoch_seconds(ts), side="right"))

    def row(self, hour_ts: datetime, visible_encounters: int | None = None) -> HourlyFeatureRow:
        hour_ts = require_hour_aligned(hour_ts, "hour_ts")
        ctx = self._context.get(hour_ts)
        if ctx is None:
            raise DataGapError(f"no context record for hour {iso(hour_ts)}", hour_ts=hour_ts)

        he = epoch_seconds(hour_ts + HOUR)  # snapshot instant: end of the hour
        n = len(self._arrival) if visible_encounters is None else visible_encounters
        arrival = self._arrival[:n]
        treat_start = self._treat_start[:n]
        board_start = self._board_start[:n]
        in_ed_end = self._in_ed_end[:n]
        treat_end = self._treat_end[:n]
        esi = self._esi[:n]

        waiting = (arrival <= he) & (he < treat_start)
        boarding = (board_start <= he) & (he < in_ed_end)
        treating = (treat_start <= he) & (he < treat_end)

        def esi_split(mask: np.ndarray) -> tuple[int, int, int]:
            sel = esi[mask]
            return (
                int(np.count_nonzero(sel <= 2)),
                int(np.count_nonzero(sel == 3)),
                int(np.count_nonzero(sel >= 4)),
            )

        def mean_elapsed_minutes(mask: np.ndarray, entry: np.ndarray) -> float:
            if not mask.any():
                return 0.0
            return float(np.mean((he - entry[mask]) / 60.0))

        w12, w3, w45 = esi_split(waiting)
        b12, b3, b45 = esi_split(boarding)
        n_wait = int(np.count_nonzero(waiting))
        n_board = int(np.count_nonzero(boarding))
        n_treat = int(np.count_nonzero(treating))

        census = int(
            np.searchsorted(self._admissions, he, side="right")
            - np.searchsorted(self._discharges, he, side="right")
        )
        surgical = int(
            np.searchsorted(self._surgery_starts, he, side="right")
            - np.searchsorted(self._surgery_ends, he, side="right")
        )

        return HourlyFeatureRow(
            hour_ts=hour_ts,
            year=hour_ts.year,
            month=hour_ts.month,
            day_of_month=hour_ts.day,
            day_of_week=hour_ts.weekday(),
            hour=hour_ts.hour,
            boarding_time_minute_hourly=mean_elapsed_minutes(boarding, board_start),
            boarding_count_hourly=n_board,
            boarding_count_esi12_hourly=b12,
            boarding_count_esi3_hourly=b3,
            boarding_count_esi45_hourly=b45,
            waiting_time_minute_hourly=mean_elapsed_minutes(waiting, arrival),
            waiting_count_hourly=n_wait,
            waiting_count_esi12_hourly=w12,
            waiting_count_esi3_hourly=w3,
            waiting_count_esi45_hourly=w45,
            treatment_time_minute_hourly=mean_elapsed_minutes(treating, treat_start),
            treatment_count_hourly=n_treat,
            total_patient_count_hourly=n_wait + n_treat + n_board,
            extreme_boarding_indicator=0,  # filled by extreme_indicator() later
            census_count_hourly=census,
            surgical_count_hourly=surgical,
            temperature=ctx.temperature,
            weather_clear=int(ctx.weather_category == "clear"),
            weather_clouds=int(ctx.weather_category == "clouds"),
            weather_rain=int(ctx.weather_category == "rain"),
            weather_thunderstorm=int(ctx.weather_category == "thunderstorm"),
            weather_other=int(ctx.weather_category == "other"),
            holiday=ctx.holiday,
            football_a=ctx.football_a,
            football_b=ctx.football_b,
        )


def aggregate_hour(
    encounters: list[EncounterRecord],
    inpatient: list[InpatientEvent],
    context: list[ContextRecord],
    hour_ts: datetime,
) -> HourlyFeatureRow:
    """Aggregate a single hour. Pure; see HourAggregator for the bulk path."""
    return HourAggregator(encounters, inpatient, context).row(hour_ts)


def rows_to_table(rows: list[HourlyFeatureRow]) -> pd.DataFrame:
    """Assemble feature rows into the canonical DataFrame (hour_ts + 30 columns)."""
    if not rows:
        return empty_table()
    df = pd.DataFrame([asdict(r) for r in rows])
    df = df[["hour_ts"] + FEATURE_COLUMNS]
    return _apply_dtypes(df)


def empty_table() -> pd.DataFrame:
    df = pd.DataFrame({c: [] for c in ["hour_ts"] + FEATURE_COLUMNS})
    return _apply_dtypes(df)


def _apply_dtypes(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    df["hour_ts"] = pd.to_datetime(df["hour_ts"], utc=True)
    for col in FEATURE_COLUMNS:
        df[col] = df[col].astype(np.float64 if col in _FLOAT_COLUMNS else np.int64)
    return df.reset_index(drop=True)


def exclude_window(table: pd.DataFrame, start: datetime, end: datetime) -> pd.DataFrame:
    """Remove rows with hour_ts in [start, end); order otherwise preserved."""
    start = require_hour_aligned(start, "start")
    end = require_hour_aligned(end, "end")
    if not start < end:
        raise ValidationError("exclusion window start must precede end")
    ts = table["hour_ts"]
    mask = (ts >= pd.Timestamp(start)) & (ts < pd.Timestamp(end))
    return table.loc[~mask].reset_index(drop=True)


def extreme_indicator(table: pd.DataFrame, mean: float, sd: float) -> pd.DataFrame:
    """Set extreme_boarding_indicator = 1 where boarding time strictly exceeds mean + sd."""
    if sd < 0:
        raise ValidationError("sd must be >= 0")
    out = table.copy()
    out["extreme_boarding_indicator"] = (
        out[TARGET_COLUMN] > (mean + sd)
    ).astype(np.int64)
    return out


def build_feature_table(
    encounters: list[EncounterRecord],
    inpatient: list[InpatientEvent],
    context: list[ContextRecord],
    start: datetime,
    end: datetime,
    exclusions: tuple[tuple[datetime, datetime], ...] = (DEFAULT_EXCLUSION,),
) -> pd.DataFrame:
    """One row per hour in [start, end) minus excluded windows, sorted by hour_ts.

    The extreme-boarding indicator is left at 0; the modeling pipeline fills
    it with training-split statistics (see extreme_indicator).
    """
    agg = HourAggregator(encounters, inpatient, context)
    rows = [agg.row(h) for h in hour_range(start, end)]
    table = rows_to_table(rows)
    for exc_start, exc_end in exclusions:
        table = exclude_window(table, exc_start, exc_end)
    return table


def validate_feature_table(table: pd.DataFrame) -> None:
    """Assert row-level invariants; raises ValidationError on the first breach."""
    expected = ["hour_ts"] + FEATURE_COLUMNS
    if list(table.columns) != expected:
        raise ValidationError(f"unexpected columns: {list(table.columns)}")
    if len(table) == 0:
        return
    values = table[FEATURE_COLUMNS].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValidationError("feature table contains NaN or infinite values")

    def col(name: str) -> np.ndarray:
        return table[name].to_numpy()

    checks = [
        (
            "waiting ESI strata must sum to waiting count",
            col("waiting_count_esi12_hourly") + col("waiting_count_esi3_hourly")
            + col("waiting_count_esi45_hourly") == col("waiting_count_hourly"),
        ),
        (
            "boarding ESI strata must sum to boarding count",
            col("boarding_count_esi12_hourly") + col("boarding_count_esi3_hourly")
            + col("boarding_count_esi45_hourly") == col("boarding_count_hourly"),
        ),
        (
            "total count must equal waiting + treatment + boarding",
            col("waiting_count_hourly") + col("treatment_count_hourly")
            + col("boarding_count_hourly") == col("total_patient_count_hourly"),
        ),
        (
            "weather one-hot must sum to 1",
            sum(col(c) for c in WEATHER_COLUMNS if c.startswith("weather_")) == 1,
        ),
        (
            "zero-count hours must have zero time features",
            ((col("boarding_count_hourly") > 0) | (col("boarding_time_minute_hourly") == 0.0))
            & ((col("waiting_count_hourly") > 0) | (col("waiting_time_minute_hourly") == 0.0))
            & ((col("treatment_count_hourly") > 0) | (col("treatment_time_minute_hourly") == 0.0)),
        ),
    ]
    for name in sorted(BINARY_COLUMNS):
        checks.append((f"{name} must be 0/1", np.isin(col(name), (0, 1))))
    for message, ok in checks:
        if not np.asarray(ok).all():
            bad = int(np.argmin(np.asarray(ok)))
            raise ValidationError(f"{message} (first bad row: {iso(table['hour_ts'].iloc[bad])})")

    ts = table["hour_ts"]
    if not ts.is_monotonic_increasing or ts.duplicated().any():
        raise ValidationError("hour_ts must be strictly increasing")


def write_features(table: pd.DataFrame, path: Path | str) -> None:
    """Write features.csv: hour_ts as ISO-8601 UTC, floats at full precision."""
    out = table.copy()
    out["hour_ts"] = [iso(ts) for ts in table["hour_ts"]]
    out.to_csv(path, index=False)


def read_features(path: Path | str) -> pd.DataFrame:
    # round_trip parsing keeps the CSV <-> table cycle bit-exact.
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ["hour_ts"] + FEATURE_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"features file missing columns: {missing}")
    df = df[["hour_ts"] + FEATURE_COLUMNS]
    return _apply_dtypes(df)
