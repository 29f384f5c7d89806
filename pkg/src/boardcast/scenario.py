"""Deterministic synthetic ED corpus generator.

Produces encounter-level ED visits, hospital inpatient events, and hourly
external context (weather / holidays / football) for a configured time range.
Identical configs yield byte-identical corpora: all randomness comes from a
single numpy PCG64 generator seeded from the config, and records are emitted
in a fixed order. The RNG algorithm and seed are pinned in the corpus
manifest so corpora stay reproducible.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import RangeError, ValidationError
from .timeutils import (
    HOUR,
    ensure_utc,
    hour_range,
    is_hour_aligned,
    iso,
    parse_iso,
)

GENERATOR_NAME = "boardcast-synth"
GENERATOR_VERSION = "0.1.0"
RNG_ALGORITHM = "numpy-pcg64"

WEATHER_CATEGORIES = ("clear", "clouds", "rain", "thunderstorm", "other")
_WEATHER_PROBS = (0.42, 0.30, 0.16, 0.05, 0.07)

# Log-normal shape parameters; the configured means fix the scale.
_SIGMA_WAIT = 0.6
_SIGMA_TREAT = 0.5
_SIGMA_BOARD = 0.8
_SIGMA_SURGERY = 0.5

_MEAN_SURGERY_MIN = 120.0
_INPATIENT_UNITS = ("unit-1", "unit-2", "unit-3", "unit-4", "unit-5")
_SURGERY_UNITS = ("or-1", "or-2", "or-3")
_ELECTIVE_ADMIT_FACTOR = 0.4   # elective admissions per hour, as share of base ED rate
_SURGERY_RATE_FACTOR = 0.25    # surgeries per hour, as share of base ED rate
_DISCHARGE_PROB_PER_HOUR = 1.0 / 72.0  # mean inpatient stay of three days


@dataclass(frozen=True)
class ScenarioConfig:
    """All tunables of the synthetic hospital scenario."""

    seed: int
    start_ts: datetime
    end_ts: datetime
    base_arrival_rate: float = 5.0
    daily_amplitude: float = 0.3
    weekly_amplitude: float = 0.1
    esi_mix: tuple[float, float, float, float, float] = (0.03, 0.22, 0.40, 0.25, 0.10)
    mean_wait_min: float = 45.0
    mean_treat_min: float = 180.0
    mean_board_min: float = 420.0
    congestion_coupling: float = 0.5
    admit_probability: float = 0.3
    event_rate_multipliers: dict[str, float] = field(
        default_factory=lambda: {"holiday": 1.2, "football_a": 1.3, "football_b": 1.25}
    )

    def validate(self) -> None:
        problems = []
        if self.seed < 0:
            problems.append("seed must be a non-negative integer")
        start, end = ensure_utc(self.start_ts), ensure_utc(self.end_ts)
        if not is_hour_aligned(start) or not is_hour_aligned(end):
            problems.append("start_ts and end_ts must be hour-aligned")
        if start > end:  # equal bounds denote the degenerate empty window
            problems.append("start_ts must not follow end_ts")
        if self.base_arrival_rate <= 0:
            problems.append("base_arrival_rate must be > 0")
        for name in ("daily_amplitude", "weekly_amplitude"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                problems.append(f"{name} must lie in [0, 1)")
        if len(self.esi_mix) != 5 or any(p < 0 for p in self.esi_mix):
            problems.append("esi_mix must be five non-negative probabilities")
        elif abs(sum(self.esi_mix) - 1.0) > 1e-9:
            problems.append("esi_mix must sum to 1 within 1e-9")
        for name in ("mean_wait_min", "mean_treat_min", "mean_board_min"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.congestion_coupling < 0:
            problems.append("congestion_coupling must be >= 0")
        if not 0.0 <= self.admit_probability <= 1.0:
            problems.append("admit_probability must lie in [0, 1]")
        for key in ("holiday", "football_a", "football_b"):
            if self.event_rate_multipliers.get(key, 1.0) <= 0:
                problems.append(f"event_rate_multipliers[{key}] must be > 0")
        if problems:
            raise ValidationError("invalid scenario config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "start_ts": iso(self.start_ts),
            "end_ts": iso(self.end_ts),
            "base_arrival_rate": self.base_arrival_rate,
            "daily_amplitude": self.daily_amplitude,
            "weekly_amplitude": self.weekly_amplitude,
            "esi_mix": list(self.esi_mix),
            "mean_wait_min": self.mean_wait_min,
            "mean_treat_min": self.mean_treat_min,
            "mean_board_min": self.mean_board_min,
            "congestion_coupling": self.congestion_coupling,
            "admit_probability": self.admit_probability,
            "event_rate_multipliers": dict(self.event_rate_multipliers),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        kwargs = dict(data)
        kwargs["start_ts"] = parse_iso(kwargs["start_ts"])
        kwargs["end_ts"] = parse_iso(kwargs["end_ts"])
        if "esi_mix" in kwargs:
            kwargs["esi_mix"] = tuple(kwargs["esi_mix"])
        return cls(**kwargs)


@dataclass(frozen=True)
class EncounterRecord:
    """One ED visit; bed_request_ts is present iff the patient was admitted."""

    patient_id: str
    visit_id: str
    esi: int
    arrival_ts: datetime
    treatment_start_ts: datetime
    bed_request_ts: datetime | None
    checkout_ts: datetime

    def check_invariants(self) -> None:
        assert 1 <= self.esi <= 5
        assert self.arrival_ts <= self.treatment_start_ts <= self.checkout_ts
        if self.bed_request_ts is not None:
            assert self.treatment_start_ts <= self.bed_request_ts <= self.checkout_ts


@dataclass(frozen=True)
class ContextRecord:
    """External conditions for one hour."""

    hour_ts: datetime
    temperature: float
    weather_category: str
    holiday: int
    football_a: int
    football_b: int


@dataclass(frozen=True)
class InpatientEvent:
    event_kind: str  # admission | discharge | surgery_start | surgery_end
    ts: datetime
    unit_id: str


@dataclass
class Corpus:
    config: ScenarioConfig
    encounters: list[EncounterRecord]
    context: list[ContextRecord]
    inpatient: list[InpatientEvent]


def federal_holidays(year: int) -> list[date]:
    """The 11 U.S. federal holidays of a year (calendar dates, no observance shifts)."""

    def nth_weekday(month: int, weekday: int, n: int) -> date:
        d = date(year, month, 1)
        offset = (weekday - d.weekday()) % 7
        return d + timedelta(days=offset + 7 * (n - 1))

    def last_weekday(month: int, weekday: int) -> date:
        if month == 12:
            d = date(year, 12, 31)
        else:
            d = date(year, month + 1, 1) - timedelta(days=1)
        return d - timedelta(days=(d.weekday() - weekday) % 7)

    return [
        date(year, 1, 1),                 # New Year's Day
        nth_weekday(1, 0, 3),             # Birthday of Martin Luther King, Jr.
        nth_weekday(2, 0, 3),             # Washington's Birthday
        last_weekday(5, 0),               # Memorial Day
        date(year, 6, 19),                # Juneteenth
        date(year, 7, 4),                 # Independence Day
        nth_weekday(9, 0, 1),             # Labor Day
        nth_weekday(10, 0, 2),            # Columbus Day
        date(year, 11, 11),               # Veterans Day
        nth_weekday(11, 3, 4),            # Thanksgiving Day
        date(year, 12, 25),               # Christmas Day
    ]


def football_game_days(year: int) -> tuple[set[date], set[date]]:
    """Game days for the two local teams: Saturdays in Sep-Nov, alternating A/B."""
    team_a: set[date] = set()
    team_b: set[date] = set()
    d = date(year, 9, 1)
    d += timedelta(days=(5 - d.weekday()) % 7)  # first Saturday in September
    index = 0
    while d.month <= 11:
        (team_a if index % 2 == 0 else team_b).add(d)
        d += timedelta(days=7)
        index += 1
    return team_a, team_b


_HOLIDAYS: dict[int, set[date]] = {}
_FOOTBALL: dict[int, tuple[set[date], set[date]]] = {}


def _holiday_cache(year: int) -> set[date]:
    if year not in _HOLIDAYS:
        _HOLIDAYS[year] = set(federal_holidays(year))
    return _HOLIDAYS[year]


def _football_cache(year: int) -> tuple[set[date], set[date]]:
    if year not in _FOOTBALL:
        _FOOTBALL[year] = football_game_days(year)
    return _FOOTBALL[year]


def event_flags(ts: datetime) -> tuple[int, int, int]:
    """(holiday, football_a, football_b) flags for the hour containing ts."""
    ts = ensure_utc(ts)
    team_a, team_b = _football_cache(ts.year)
    d = ts.date()
    return (int(d in _holiday_cache(ts.year)), int(d in team_a), int(d in team_b))


def arrival_rate(t: datetime, cfg: ScenarioConfig) -> float:
    """Expected ED arrivals per hour at time t.

    base * (1 + daily_amplitude*sin(2*pi*hour/24))
         * (1 + weekly_amplitude*sin(2*pi*weekday/7))
         * product of applicable event multipliers, clamped at 0.
    """
    t = ensure_utc(t)
    if not (cfg.start_ts <= t < cfg.end_ts):
        raise RangeError(
            f"t={iso(t)} outside scenario range [{iso(cfg.start_ts)}, {iso(cfg.end_ts)})"
        )
    rate = cfg.base_arrival_rate
    rate *= 1.0 + cfg.daily_amplitude * math.sin(2.0 * math.pi * t.hour / 24.0)
    rate *= 1.0 + cfg.weekly_amplitude * math.sin(2.0 * math.pi * t.weekday() / 7.0)
    holiday, fb_a, fb_b = event_flags(t)
    if holiday:
        rate *= cfg.event_rate_multipliers.get("holiday", 1.0)
    if fb_a:
        rate *= cfg.event_rate_multipliers.get("football_a", 1.0)
    if fb_b:
        rate *= cfg.event_rate_multipliers.get("football_b", 1.0)
    return max(rate, 0.0)


def _lognormal_minutes(rng: np.random.Generator, mean_min: float, sigma: float) -> float:
    mu = math.log(mean_min) - 0.5 * sigma * sigma
    return float(rng.lognormal(mean=mu, sigma=sigma))


def _generate_context(cfg: ScenarioConfig, rng: np.random.Generator) -> list[ContextRecord]:
    records = []
    for hour in hour_range(cfg.start_ts, cfg.end_ts):
        doy = hour.timetuple().tm_yday
        temp = (
            62.0
            + 18.0 * math.sin(2.0 * math.pi * (doy - 105) / 365.25)
            + 7.0 * math.sin(2.0 * math.pi * (hour.hour - 9) / 24.0)
            + float(rng.normal(0.0, 2.5))
        )
        category = WEATHER_CATEGORIES[int(rng.choice(len(WEATHER_CATEGORIES), p=_WEATHER_PROBS))]
        holiday, fb_a, fb_b = event_flags(hour)
        records.append(
            ContextRecord(
                hour_ts=hour,
                temperature=round(temp, 2),
                weather_category=category,
                holiday=holiday,
                football_a=fb_a,
                football_b=fb_b,
            )
        )
    return records


def _generate_encounters(cfg: ScenarioConfig, rng: np.random.Generator) -> list[EncounterRecord]:
    # Pass 1: draw every visit without congestion feedback.
    raw = []  # (arrival, esi, wait_s, treat_s, admitted, base_board_min)
    for hour in hour_range(cfg.start_ts, cfg.end_ts):
        n = int(rng.poisson(arrival_rate(hour, cfg)))
        for _ in range(n):
            arrival = hour + timedelta(seconds=int(rng.integers(0, 3600)))
            esi = int(rng.choice(5, p=cfg.esi_mix)) + 1
            wait_s = int(round(_lognormal_minutes(rng, cfg.mean_wait_min, _SIGMA_WAIT) * 60))
            treat_s = int(round(_lognormal_minutes(rng, cfg.mean_treat_min, _SIGMA_TREAT) * 60))
            admitted = bool(rng.random() < cfg.admit_probability)
            base_board = (
                _lognormal_minutes(rng, cfg.mean_board_min, _SIGMA_BOARD) if admitted else 0.0
            )
            raw.append((arrival, esi, wait_s, treat_s, admitted, base_board))

    raw.sort(key=lambda r: r[0])

    # Pass 2: congestion feedback. Sweep admitted visits in bed-request order;
    # each boarding duration inflates with the number of concurrent boarders.
    admitted_rows = []
    for idx, (arrival, esi, wait_s, treat_s, admitted, base_board) in enumerate(raw):
        if admitted:
            bed_request = arrival + timedelta(seconds=wait_s + treat_s)
            admitted_rows.append((bed_request, idx, base_board))
    admitted_rows.sort(key=lambda r: (r[0], r[1]))

    board_seconds: dict[int, int] = {}
    active: list[datetime] = []  # min-heap of boarding end times
    for bed_request, idx, base_board in admitted_rows:
        while active and active[0] <= bed_request:
            heapq.heappop(active)
        concurrent = len(active)
        scaled = base_board * (1.0 + cfg.congestion_coupling * concurrent / 10.0)
        seconds = max(int(round(scaled * 60)), 0)
        board_seconds[idx] = seconds
        heapq.heappush(active, bed_request + timedelta(seconds=seconds))

    encounters = []
    for idx, (arrival, esi, wait_s, treat_s, admitted, _) in enumerate(raw):
        visit_no = idx + 1
        treatment_start = arrival + timedelta(seconds=wait_s)
        if admitted:
            bed_request = treatment_start + timedelta(seconds=treat_s)
            checkout = bed_request + timedelta(seconds=board_seconds[idx])
        else:
            bed_request = None
            checkout = treatment_start + timedelta(seconds=treat_s)
        encounters.append(
            EncounterRecord(
                patient_id=f"P{visit_no:06d}",
                visit_id=f"V{visit_no:06d}",
                esi=esi,
                arrival_ts=arrival,
                treatment_start_ts=treatment_start,
                bed_request_ts=bed_request,
                checkout_ts=checkout,
            )
        )
    return encounters


def _generate_inpatient(
    cfg: ScenarioConfig, rng: np.random.Generator, encounters: list[EncounterRecord]
) -> list[InpatientEvent]:
    # ED-admitted patients enter the hospital at checkout; electives on top.
    ed_admissions = sorted(
        e.checkout_ts for e in encounters if e.bed_request_ts is not None
    )
    events: list[tuple[datetime, int, str, str]] = []  # (ts, seq, kind, unit)
    seq = 0

    def emit(ts: datetime, kind: str, unit: str) -> None:
        nonlocal seq
        events.append((ts, seq, kind, unit))
        seq += 1

    census = 0
    ed_cursor = 0
    elective_rate = _ELECTIVE_ADMIT_FACTOR * cfg.base_arrival_rate
    surgery_rate = _SURGERY_RATE_FACTOR * cfg.base_arrival_rate
    for hour in hour_range(cfg.start_ts, cfg.end_ts):
        hour_end = hour + HOUR
        # Discharges are drawn against the census at the top of the hour so
        # the cumulative census can never dip below zero mid-hour.
        n_dis = int(rng.binomial(census, _DISCHARGE_PROB_PER_HOUR)) if census > 0 else 0
        for _ in range(n_dis):
            ts = hour + timedelta(seconds=int(rng.integers(0, 3600)))
            emit(ts, "discharge", str(rng.choice(_INPATIENT_UNITS)))
        census -= n_dis

        while ed_cursor < len(ed_admissions) and ed_admissions[ed_cursor] < hour_end:
            emit(ed_admissions[ed_cursor], "admission", str(rng.choice(_INPATIENT_UNITS)))
            census += 1
            ed_cursor += 1

        n_elec = int(rng.poisson(elective_rate))
        for _ in range(n_elec):
            ts = hour + timedelta(seconds=int(rng.integers(0, 3600)))
            emit(ts, "admission", str(rng.choice(_INPATIENT_UNITS)))
            census += 1

        n_surg = int(rng.poisson(surgery_rate))
        for _ in range(n_surg):
            start = hour + timedelta(seconds=int(rng.integers(0, 3600)))
            dur_s = int(round(_lognormal_minutes(rng, _MEAN_SURGERY_MIN, _SIGMA_SURGERY) * 60))
            unit = str(rng.choice(_SURGERY_UNITS))
            emit(start, "surgery_start", unit)
            emit(start + timedelta(seconds=dur_s), "surgery_end", unit)

    # Late ED admissions (checkout beyond the range) still enter the hospital.
    while ed_cursor < len(ed_admissions):
        emit(ed_admissions[ed_cursor], "admission", str(rng.choice(_INPATIENT_UNITS)))
        ed_cursor += 1

    events.sort(key=lambda e: (e[0], e[1]))
    return [InpatientEvent(event_kind=k, ts=ts, unit_id=u) for ts, _, k, u in events]


def generate_corpus(cfg: ScenarioConfig) -> Corpus:
    """Generate the full corpus for a scenario. Deterministic in the config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    context = _generate_context(cfg, rng)
    encounters = _generate_encounters(cfg, rng)
    inpatient = _generate_inpatient(cfg, rng, encounters)
    return Corpus(config=cfg, encounters=encounters, context=context, inpatient=inpatient)


# ---------------------------------------------------------------------------
# Corpus files: encounters.csv, context.csv, inpatient.csv + manifest.json
# ---------------------------------------------------------------------------

ENCOUNTER_HEADER = [
    "patient_id", "visit_id", "esi",
    "arrival_ts", "treatment_start_ts", "bed_request_ts", "checkout_ts",
]
CONTEXT_HEADER = [
    "hour_ts", "temperature", "weather_category", "holiday", "football_a", "football_b",
]
INPATIENT_HEADER = ["event_kind", "ts", "unit_id"]


def write_corpus(corpus: Corpus, out_dir: Path | str) -> dict:
    """Write the three corpus CSVs plus a manifest; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "encounters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENCOUNTER_HEADER)
        for e in corpus.encounters:
            writer.writerow([
                e.patient_id, e.visit_id, e.esi,
                iso(e.arrival_ts), iso(e.treatment_start_ts),
                iso(e.bed_request_ts) if e.bed_request_ts is not None else "",
                iso(e.checkout_ts),
            ])

    with open(out / "context.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONTEXT_HEADER)
        for c in corpus.context:
            writer.writerow([
                iso(c.hour_ts), repr(c.temperature), c.weather_category,
                c.holiday, c.football_a, c.football_b,
            ])

    with open(out / "inpatient.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INPATIENT_HEADER)
        for ev in corpus.inpatient:
            writer.writerow([ev.event_kind, iso(ev.ts), ev.unit_id])

    manifest = {
        "generator": {
            "name": GENERATOR_NAME,
            "version": GENERATOR_VERSION,
            "rng": RNG_ALGORITHM,
        },
        "seed": corpus.config.seed,
        "config": corpus.config.to_dict(),
        "rows": {
            "encounters": len(corpus.encounters),
            "context": len(corpus.context),
            "inpatient": len(corpus.inpatient),
        },
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_corpus(corpus_dir: Path | str) -> Corpus:
    """Load a corpus previously written by :func:`write_corpus`."""
    src = Path(corpus_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    cfg = ScenarioConfig.from_dict(manifest["config"])

    encounters = []
    with open(src / "encounters.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            encounters.append(
                EncounterRecord(
                    patient_id=row["patient_id"],
                    visit_id=row["visit_id"],
                    esi=int(row["esi"]),
                    arrival_ts=parse_iso(row["arrival_ts"]),
                    treatment_start_ts=parse_iso(row["treatment_start_ts"]),
                    bed_request_ts=parse_iso(row["bed_request_ts"]) if row["bed_request_ts"] else None,
                    checkout_ts=parse_iso(row["checkout_ts"]),
                )
            )

    context = []
    with open(src / "context.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            context.append(
                ContextRecord(
                    hour_ts=parse_iso(row["hour_ts"]),
                    temperature=float(row["temperature"]),
                    weather_category=row["weather_category"],
                    holiday=int(row["holiday"]),
                    football_a=int(row["football_a"]),
                    football_b=int(row["football_b"]),
                )
            )

    inpatient = []
    with open(src / "inpatient.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            inpatient.append(
                InpatientEvent(
                    event_kind=row["event_kind"],
                    ts=parse_iso(row["ts"]),
                    unit_id=row["unit_id"],
                )
            )

    return Corpus(config=cfg, encounters=encounters, context=context, inpatient=inpatient)
