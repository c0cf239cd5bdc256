"""Detection event record shared by detectors, the scheduler and the stores.

Times are integer milliseconds since the Unix epoch (UTC), which is exactly
the resolution the text backends persist. Frequencies and scores are kept on
a 6-decimal grid for the same reason; :func:`make_event` does the snapping.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

from .errors import ValidationError

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)

STRING_FIELDS = ("event_id", "run_id", "channel_id", "detector_id", "tag")


@dataclass(frozen=True, slots=True)
class EventRecord:
    event_id: str
    run_id: str
    channel_id: str
    begin_time: int  # ms since epoch, UTC
    end_time: int
    f_lo: float
    f_hi: float
    score: float
    detector_id: str
    tag: str = ""

    @property
    def begin_utc(self) -> datetime:
        return ms_to_datetime(self.begin_time)

    @property
    def end_utc(self) -> datetime:
        return ms_to_datetime(self.end_time)

    @property
    def duration(self) -> float:
        return (self.end_time - self.begin_time) / 1000.0

    def with_ids(self, event_id: str, run_id: str) -> "EventRecord":
        return replace(self, event_id=event_id, run_id=run_id)

    def validate(self, row: int | None = None) -> None:
        """Raise :class:`ValidationError` if any schema invariant is broken."""
        where = f"row {row}: " if row is not None else ""
        if not (isinstance(self.begin_time, int) and isinstance(self.end_time, int)):
            raise ValidationError(f"{where}times must be integer milliseconds")
        if self.begin_time >= self.end_time:
            raise ValidationError(f"{where}begin_time must precede end_time")
        for name in ("f_lo", "f_hi", "score"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{where}{name} is not finite")
        if self.f_lo >= self.f_hi:
            raise ValidationError(f"{where}f_lo must be below f_hi")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"{where}score {self.score} outside [0, 1]")
        for name in STRING_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, str):
                raise ValidationError(f"{where}{name} must be a string")
            if any(unicodedata.category(ch)[0] == "C" for ch in value):
                raise ValidationError(f"{where}{name} contains control characters")


def snap(x: float) -> float:
    return round(float(x), 6)


def seconds_to_ms(t: float) -> int:
    return int(round(t * 1000.0))


def ms_to_datetime(ms: int) -> datetime:
    return EPOCH + timedelta(milliseconds=ms)


def datetime_to_ms(dt: datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - EPOCH) // _MS


def format_iso_ms(ms: int) -> str:
    dt = ms_to_datetime(ms)
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{ms % 1000:03d}Z"


def parse_iso_ms(text: str) -> int:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime_to_ms(datetime.fromisoformat(text))


def make_event(
    t_start: float,
    t_end: float,
    f_lo: float,
    f_hi: float,
    score: float,
    *,
    channel_id: str = "",
    detector_id: str = "",
    tag: str = "",
    event_id: str = "",
    run_id: str = "",
) -> EventRecord:
    """Build a canonical event from POSIX-second times and raw floats."""
    begin = seconds_to_ms(t_start)
    end = max(seconds_to_ms(t_end), begin + 1)
    lo = snap(max(f_lo, 0.0))
    hi = snap(f_hi)
    if hi <= lo:
        hi = snap(lo + 1e-6)
    return EventRecord(
        event_id=event_id,
        run_id=run_id,
        channel_id=channel_id,
        begin_time=begin,
        end_time=end,
        f_lo=lo,
        f_hi=hi,
        score=snap(min(max(score, 0.0), 1.0)),
        detector_id=detector_id,
        tag=tag,
    )


def canonical_key(ev: EventRecord):
    """Global ordering used for merged output: time, channel, detector, then the rest."""
    return (
        ev.begin_time,
        ev.channel_id,
        ev.detector_id,
        ev.end_time,
        ev.f_lo,
        ev.f_hi,
        -ev.score,
        ev.tag,
        ev.event_id,
    )
