"""Sound archive discovery, manifests, work-unit partitioning and sample reads.

Files follow ``<channel>_<YYYYMMDD>_<HHMMSS>.wav`` (UTC, mono PCM, 16 or 24
bit). A channel's timeline is the union of its files; contiguous files form a
segment and work units never straddle the gap between two segments.
"""

from __future__ import annotations

import os
import re
import wave
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ArchiveError, DecodeError, FormatError, GapInData

DEFAULT_PATTERN = r"^(?P<channel>[A-Za-z0-9-]+)_(?P<date>\d{8})_(?P<time>\d{6})\.wav$"
MANIFEST_HEADER = "#adamine-manifest v1"
SUPPORTED_BIT_DEPTHS = (16, 24)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    channel_id: str
    start_utc: datetime
    sample_rate: int
    n_samples: int
    bit_depth: int

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class ArchiveManifest:
    entries: tuple[ManifestEntry, ...] = ()
    skipped: tuple[tuple[str, str], ...] = ()

    def channels(self) -> list[str]:
        return sorted({e.channel_id for e in self.entries})

    def channel_entries(self, channel_id: str) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.channel_id == channel_id]

    @cached_property
    def _epochs(self) -> dict[str, datetime]:
        out: dict[str, datetime] = {}
        for e in self.entries:
            if e.channel_id not in out or e.start_utc < out[e.channel_id]:
                out[e.channel_id] = e.start_utc
        return out

    def epoch(self, channel_id: str) -> datetime:
        return self._epochs[channel_id]

    def sample_rate(self, channel_id: str) -> int:
        return next(e.sample_rate for e in self.entries if e.channel_id == channel_id)

    def offset_samples(self, index: int) -> int:
        """Start of entry ``index`` in samples from its channel epoch."""
        e = self.entries[index]
        dt = (e.start_utc - self.epoch(e.channel_id)).total_seconds()
        return int(round(dt * e.sample_rate))

    def segments(self, channel_id: str) -> list[tuple[int, int, list[int]]]:
        """Contiguous recorded stretches as ``(first_sample, end_sample, entry indices)``."""
        out: list[tuple[int, int, list[int]]] = []
        for i in self.channel_entries(channel_id):
            start = self.offset_samples(i)
            stop = start + self.entries[i].n_samples
            if out and out[-1][1] == start:
                s0, _, idx = out[-1]
                out[-1] = (s0, stop, idx + [i])
            else:
                out.append((start, stop, [i]))
        return out

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER]
        for e in self.entries:
            lines.append(
                "\t".join(
                    [
                        e.channel_id,
                        e.path,
                        e.start_utc.strftime("%Y-%m-%dT%H:%M:%SZ"),
                        str(e.sample_rate),
                        str(e.n_samples),
                        str(e.bit_depth),
                    ]
                )
            )
        for path, reason in self.skipped:
            lines.append(f"#skip\t{path}\t{reason}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "ArchiveManifest":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(MANIFEST_HEADER):
            raise FormatError("manifest: missing '#adamine-manifest v1' header")
        entries, skipped = [], []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("#skip\t"):
                _, p, reason = line.split("\t", 2)
                skipped.append((p, reason))
                continue
            if line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise FormatError(f"manifest line {n}: expected 6 fields, got {len(parts)}")
            ch, p, start, rate, ns, bits = parts
            start_dt = datetime.strptime(start, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
            entries.append(ManifestEntry(p, ch, start_dt, int(rate), int(ns), int(bits)))
        return cls(tuple(entries), tuple(skipped))

    @classmethod
    def read(cls, path) -> "ArchiveManifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class WorkUnit:
    channel_id: str
    core_span: tuple[float, float]  # seconds from channel epoch
    pad_before: float
    pad_after: float
    source_entries: tuple[int, ...]
    sample_rate: int = field(default=0, compare=False)

    @property
    def span(self) -> tuple[float, float]:
        return (self.core_span[0] - self.pad_before, self.core_span[1] + self.pad_after)

    @property
    def core_len(self) -> float:
        return self.core_span[1] - self.core_span[0]


@dataclass(frozen=True)
class SampleBlock:
    channel_id: str
    start_utc: datetime
    sample_rate: int
    samples: np.ndarray
    pad_before: float = 0.0
    pad_after: float = 0.0

    @property
    def start_posix(self) -> float:
        return self.start_utc.timestamp()

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _wav_header(path: Path) -> tuple[int, int, int, int]:
    with wave.open(str(path), "rb") as w:
        return w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()


def scan_archive(root, name_pattern: str = DEFAULT_PATTERN) -> ArchiveManifest:
    """Inventory every file directly under ``root``.

    Files that do not match the naming convention, or whose header cannot be
    used, are listed in ``skipped`` with a reason rather than failing the scan.
    """
    root = Path(root)
    try:
        names = sorted(os.listdir(root))
    except OSError as exc:
        raise ArchiveError(f"cannot read archive root {root}: {exc}") from exc
    rx = re.compile(name_pattern)
    found: list[ManifestEntry] = []
    skipped: list[tuple[str, str]] = []
    for name in names:
        path = root / name
        if not path.is_file():
            continue
        m = rx.match(name)
        if m is None:
            skipped.append((str(path), "name does not match pattern"))
            continue
        try:
            start = datetime.strptime(m["date"] + m["time"], "%Y%m%d%H%M%S").replace(
                tzinfo=timezone.utc
            )
        except ValueError:
            skipped.append((str(path), "invalid timestamp in name"))
            continue
        try:
            nch, width, rate, nframes = _wav_header(path)
        except (wave.Error, EOFError, OSError) as exc:
            skipped.append((str(path), f"corrupt header: {exc}"))
            continue
        if nch != 1:
            skipped.append((str(path), f"expected mono, found {nch} channels"))
        elif width * 8 not in SUPPORTED_BIT_DEPTHS:
            skipped.append((str(path), f"unsupported bit depth {width * 8}"))
        elif rate <= 0 or nframes <= 0:
            skipped.append((str(path), "empty recording"))
        else:
            found.append(ManifestEntry(str(path), m["channel"], start, rate, nframes, width * 8))

    found.sort(key=lambda e: (e.channel_id, e.start_utc, e.path))
    entries: list[ManifestEntry] = []
    for e in found:
        prev = entries[-1] if entries and entries[-1].channel_id == e.channel_id else None
        if prev is not None:
            if e.sample_rate != prev.sample_rate:
                skipped.append((e.path, "sample rate differs from channel"))
                continue
            prev_end = (prev.start_utc - e.start_utc).total_seconds() + prev.duration
            if prev_end > 0.5 / e.sample_rate:
                skipped.append((e.path, f"overlaps {os.path.basename(prev.path)}"))
                continue
        entries.append(e)
    return ArchiveManifest(tuple(entries), tuple(sorted(skipped)))


def partition(manifest: ArchiveManifest, unit_len: float, pad: float) -> list[WorkUnit]:
    """Split each channel's recorded segments into padded work units."""
    if unit_len <= 0:
        raise ValueError("unit_len must be positive")
    if not 0 <= pad < unit_len:
        raise ValueError("pad must satisfy 0 <= pad < unit_len")
    units: list[WorkUnit] = []
    for ch in manifest.channels():
        rate = manifest.sample_rate(ch)
        for s0, s1, idx in manifest.segments(ch):
            seg_start, seg_end = s0 / rate, s1 / rate
            n_units = int(np.ceil((seg_end - seg_start) / unit_len - 1e-12))
            for k in range(n_units):
                c0 = seg_start + k * unit_len
                c1 = min(seg_start + (k + 1) * unit_len, seg_end)
                pb = min(pad, c0 - seg_start)
                pa = min(pad, seg_end - c1)
                lo, hi = c0 - pb, c1 + pa
                used = tuple(
                    i
                    for i in idx
                    if manifest.offset_samples(i) / rate < hi
                    and (manifest.offset_samples(i) + manifest.entries[i].n_samples) / rate > lo
                )
                units.append(WorkUnit(ch, (c0, c1), pb, pa, used, rate))
    return units


def _decode_pcm(raw: bytes, bit_depth: int) -> np.ndarray:
    if bit_depth == 16:
        ints = np.frombuffer(raw, dtype="<i2").astype(np.int32)
    elif bit_depth == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
    else:
        raise DecodeError(f"unsupported bit depth {bit_depth}")
    return ints.astype(np.float64) / float(1 << (bit_depth - 1))


def _read_frames(entry: ManifestEntry, first: int, count: int) -> np.ndarray:
    try:
        with wave.open(entry.path, "rb") as w:
            w.setpos(first)
            raw = w.readframes(count)
    except (wave.Error, EOFError, OSError) as exc:
        raise DecodeError(f"{entry.path}: {exc}") from exc
    width = entry.bit_depth // 8
    if len(raw) != count * width:
        raise DecodeError(
            f"{entry.path}: truncated payload, wanted {count} frames, got {len(raw) // width}"
        )
    return _decode_pcm(raw, entry.bit_depth)


def read_span(
    manifest: ArchiveManifest, channel_id: str, first: int, count: int, entries=None
) -> np.ndarray:
    """Samples ``[first, first + count)`` of a channel, counted from its epoch."""
    if entries is None:
        entries = manifest.channel_entries(channel_id)
    rate = manifest.sample_rate(channel_id)
    out = np.zeros(count, dtype=np.float64)
    covered: list[tuple[int, int]] = []
    stop = first + count
    for i in entries:
        e = manifest.entries[i]
        e0 = manifest.offset_samples(i)
        e1 = e0 + e.n_samples
        a, b = max(first, e0), min(stop, e1)
        if a >= b:
            continue
        out[a - first : b - first] = _read_frames(e, a - e0, b - a)
        covered.append((a, b))
    covered.sort()
    cursor = first
    for a, b in covered + [(stop, stop)]:
        if a > cursor:
            raise GapInData(channel_id, cursor / rate, (a - cursor) / rate)
        cursor = max(cursor, b)
    return out


def read_samples(unit: WorkUnit, manifest: ArchiveManifest) -> SampleBlock:
    rate = manifest.sample_rate(unit.channel_id)
    t0 = unit.core_span[0] - unit.pad_before
    first = int(round(t0 * rate))
    count = int(round((unit.pad_before + unit.core_len + unit.pad_after) * rate))
    samples = read_span(manifest, unit.channel_id, first, count, unit.source_entries)
    epoch = manifest.epoch(unit.channel_id)
    start = datetime.fromtimestamp(epoch.timestamp() + first / rate, tz=timezone.utc)
    return SampleBlock(unit.channel_id, start, rate, samples, unit.pad_before, unit.pad_after)


def write_wav(path, samples: np.ndarray, sample_rate: int, bit_depth: int = 16) -> None:
    """Write mono PCM, clipping to full scale."""
    full = float(1 << (bit_depth - 1))
    ints = np.clip(np.round(np.asarray(samples) * full), -full, full - 1).astype(np.int32)
    if bit_depth == 16:
        raw = ints.astype("<i2").tobytes()
    elif bit_depth == 24:
        u = (ints & 0xFFFFFF).astype(np.uint32)
        raw = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(bit_depth // 8)
        w.setframerate(int(sample_rate))
        w.writeframes(raw)


def archive_filename(channel_id: str, start: datetime) -> str:
    return f"{channel_id}_{start:%Y%m%d_%H%M%S}.wav"
