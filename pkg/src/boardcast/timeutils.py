"""UTC timestamp helpers.

Every timestamp in the package is a timezone-aware UTC ``datetime``. On disk
and over the wire they are ISO-8601 with a ``Z`` suffix and second
resolution (hour rows are hour-aligned).
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

HOUR = timedelta(hours=1)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0, second: int = 0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def ensure_utc(ts: datetime) -> datetime:
    """Normalize a datetime to UTC; naive datetimes are rejected."""
    if ts.tzinfo is None:
        raise ValueError(f"naive datetime not allowed: {ts!r}")
    return ts.astimezone(timezone.utc)


def iso(ts: datetime) -> str:
    """Format as ISO-8601 UTC with Z suffix, second resolution."""
    ts = ensure_utc(ts)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(text: str) -> datetime:
    """Parse an ISO-8601 timestamp (Z or explicit offset) into UTC."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    return datetime.fromisoformat(cleaned).astimezone(timezone.utc)


def is_hour_aligned(ts: datetime) -> bool:
    return ts.minute == 0 and ts.second == 0 and ts.microsecond == 0


def floor_hour(ts: datetime) -> datetime:
    ts = ensure_utc(ts)
    return ts.replace(minute=0, second=0, microsecond=0)


def require_hour_aligned(ts: datetime, name: str) -> datetime:
    ts = ensure_utc(ts)
    if not is_hour_aligned(ts):
        raise ValueError(f"{name} must be hour-aligned, got {iso(ts)}")
    return ts


def hour_range(start: datetime, end: datetime) -> list[datetime]:
    """Hour-aligned timestamps in [start, end)."""
    start = require_hour_aligned(start, "start")
    end = require_hour_aligned(end, "end")
    out = []
    cur = start
    while cur < end:
        out.append(cur)
        cur = cur + HOUR
    return out


def epoch_seconds(ts: datetime) -> float:
    return (ensure_utc(ts) - _EPOCH).total_seconds()


def from_epoch_seconds(seconds: float) -> datetime:
    return _EPOCH + timedelta(seconds=seconds)


def minutes_between(earlier: datetime, later: datetime) -> float:
    return (later - earlier).total_seconds() / 60.0
