"""Type-II detection: pulses in a band energy projection, grouped into regular trains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram, energy_projection
from .errors import InsufficientPulses
from .events import EventRecord, make_event


@dataclass(frozen=True)
class PulseTrain:
    pulse_times: tuple[float, ...]
    period: float
    regularity: float

    @property
    def count(self) -> int:
        return len(self.pulse_times)

    @property
    def span(self) -> tuple[float, float]:
        return (self.pulse_times[0], self.pulse_times[-1])


@dataclass(frozen=True)
class TrainParams:
    min_pulses: int = 5
    min_regularity: float = 0.7
    max_period: float = 2.0
    min_period: float = 0.0
    tolerance: float = 0.25  # fraction of the period accepted when chaining pulses

    def __post_init__(self):
        if self.min_pulses < 3:
            raise ValueError("min_pulses must be at least 3")
        if not 0 <= self.min_regularity <= 1:
            raise ValueError("min_regularity must lie in [0, 1]")
        if not 0 <= self.min_period < self.max_period:
            raise ValueError("period window must satisfy 0 <= min_period < max_period")
        if not 0 < self.tolerance < 0.5:
            raise ValueError("tolerance must lie in (0, 0.5)")


def detect_pulses(
    projection: np.ndarray, hop: float, threshold: float, min_gap: float, t0: float = 0.0
) -> list[float]:
    """Times of local maxima above ``threshold``; peaks closer than ``min_gap`` keep the larger."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if min_gap < hop - 1e-12:
        raise ValueError("min_gap must be at least one hop")
    p = np.asarray(projection, dtype=np.float64)
    if p.size == 0:
        return []
    left = np.concatenate([[-np.inf], p[:-1]])
    right = np.concatenate([p[1:], [-np.inf]])
    # plateaus report their first frame
    cand = np.flatnonzero((p > threshold) & (p > left) & (p >= right))
    order = sorted(cand.tolist(), key=lambda i: (-p[i], i))
    kept: list[int] = []
    for i in order:
        if all(abs(i - k) * hop >= min_gap - 1e-12 for k in kept):
            kept.append(i)
    return [t0 + i * hop for i in sorted(kept)]


def pulse_train_score(pulse_times) -> PulseTrain:
    """Median inter-pulse interval and regularity ``1 - min(1, CV)`` of the intervals."""
    t = np.sort(np.asarray(pulse_times, dtype=np.float64))
    if t.size < 3:
        raise InsufficientPulses(f"need at least 3 pulses, got {t.size}")
    iv = np.diff(t)
    period = float(np.median(iv))
    if period <= 0:
        raise InsufficientPulses("coincident pulse times")
    cv = float(np.std(iv)) / period
    return PulseTrain(tuple(t.tolist()), period, 1.0 - min(1.0, cv))


def _chain(times: list[float], i: int, j: int, params: TrainParams) -> list[int]:
    """Grow a train from the consecutive seed pair (i, j) in both directions.

    The next pulse is the one nearest to last + period within the tolerance,
    where period is the median of the intervals accepted so far.
    """
    arr = np.asarray(times)
    members = [i, j]
    intervals = [times[j] - times[i]]
    for direction in (1, -1):
        while True:
            period = float(np.median(intervals))
            anchor = times[members[-1]] if direction == 1 else times[members[0]]
            target = anchor + direction * period
            k = int(np.argmin(np.abs(arr - target)))
            if abs(times[k] - target) > params.tolerance * period or k in members:
                break
            if direction == 1:
                if times[k] <= anchor:
                    break
                members.append(k)
            else:
                if times[k] >= anchor:
                    break
                members.insert(0, k)
            intervals.append(abs(times[k] - anchor))
    return members


def extract_trains(pulse_times, params: TrainParams = TrainParams()) -> list[PulseTrain]:
    """Greedy residual extraction of pulse trains.

    Each round grows a candidate from every consecutive pulse pair, keeps the
    most regular one that qualifies (ties go to more pulses, then earlier
    start), removes its pulses and repeats on the rest.
    """
    remaining = sorted(float(t) for t in pulse_times)
    found: list[PulseTrain] = []
    while len(remaining) >= params.min_pulses:
        best = None
        best_key = None
        seen: set[tuple[int, ...]] = set()
        for i in range(len(remaining) - 1):
            gap = remaining[i + 1] - remaining[i]
            if not params.min_period <= gap <= params.max_period * (1 + params.tolerance):
                continue
            members = tuple(_chain(remaining, i, i + 1, params))
            if members in seen or len(members) < params.min_pulses:
                continue
            seen.add(members)
            train = pulse_train_score([remaining[k] for k in members])
            if train.regularity < params.min_regularity:
                continue
            if not params.min_period <= train.period <= params.max_period:
                continue
            key = (train.regularity, train.count, -train.pulse_times[0])
            if best_key is None or key > best_key:
                best, best_key = (members, train), key
        if best is None:
            break
        members, train = best
        found.append(train)
        drop = set(members)
        remaining = [t for k, t in enumerate(remaining) if k not in drop]
    return found


def type2_trains(
    spec: Spectrogram,
    band: tuple[float, float],
    threshold_factor: float = 6.0,
    min_gap: float = 0.1,
    params: TrainParams = TrainParams(),
) -> list[PulseTrain]:
    """Pulse trains found in ``band``.

    Pulses are peaks of the band energy projection whose robust z-score
    ``(x - median) / (1.4826 * MAD)`` exceeds ``threshold_factor``.
    """
    proj = energy_projection(spec, "time", band)
    med = float(np.median(proj))
    spread = 1.4826 * float(np.median(np.abs(proj - med)))
    if spread <= 0:
        spread = float(proj.std()) or 1.0
    pulses = detect_pulses(proj, spec.frame_hop, med + threshold_factor * spread, min_gap, spec.t0)
    return extract_trains(pulses, params)


def type2_detect(
    spec: Spectrogram,
    band: tuple[float, float],
    threshold_factor: float = 6.0,
    min_gap: float = 0.1,
    params: TrainParams = TrainParams(),
    *,
    channel_id: str = "",
    detector_id: str = "",
    tag: str = "",
) -> list[EventRecord]:
    """Repeating short tonal sounds inside ``band``; one event per train, scored by regularity."""
    events = []
    half = 0.5 * spec.frame_hop
    for train in type2_trains(spec, band, threshold_factor, min_gap, params):
        events.append(
            make_event(
                train.span[0] - half,
                train.span[1] + half,
                band[0],
                band[1],
                train.regularity,
                channel_id=channel_id,
                detector_id=detector_id,
                tag=tag,
            )
        )
    return events
