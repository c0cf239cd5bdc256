"""Persistence and querying of detection events through four backends.

``flat``     tab-delimited text, parsed in full for every query
``array``    whole-store binary image (numeric columns + string columns), scanned in memory
``xml``      one element per event, parsed with ElementTree
``indexed``  single file of begin-time-sorted pages, a sparse page index and a
             dense score index; queries read only the pages they need

Every backend stores the same canonical content, so loads and queries agree
across backends event for event.
"""

from __future__ import annotations

import os
import statistics
import struct
import tempfile
import time
import warnings
import xml.etree.ElementTree as ET
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .events import EventRecord, format_iso_ms, parse_iso_ms, snap

BACKENDS = ("flat", "array", "xml", "indexed")
FLAT_HEADER = "event_id\trun_id\tchannel\tbegin_iso8601\tend_iso8601\tlow_hz\thigh_hz\tscore\tdetector\ttag"
FLAT_ROW_LIMIT = 1_000_000

ARRAY_MAGIC = b"ADMARR1\n"
INDEX_MAGIC = b"ADMIDX1\n"
PAGE_SIZE = 256

_STR_COLS = ("event_id", "run_id", "channel_id", "detector_id", "tag")
_NUM_DTYPE = np.dtype(
    [("begin", "<i8"), ("end", "<i8"), ("f_lo", "<f8"), ("f_hi", "<f8"), ("score", "<f8")]
)


@dataclass(frozen=True)
class Query:
    """Conjunctive predicate; every field is optional.

    ``time_range`` selects events whose begin time lies in ``[start, stop)``
    (milliseconds since the epoch).
    """

    time_range: tuple[int, int] | None = None
    min_score: float | None = None
    tag: str | None = None
    detector: str | None = None

    def matches(self, ev: EventRecord) -> bool:
        if self.time_range is not None and not (
            self.time_range[0] <= ev.begin_time < self.time_range[1]
        ):
            return False
        if self.min_score is not None and ev.score < self.min_score:
            return False
        if self.tag is not None and ev.tag != self.tag:
            return False
        if self.detector is not None and ev.detector_id != self.detector:
            return False
        return True


def sort_key(ev: EventRecord):
    return (ev.begin_time, ev.event_id)


def canonicalize(events: Iterable[EventRecord]) -> list[EventRecord]:
    """Validate every row and snap floats to the persisted 6-decimal grid."""
    out = []
    for row, ev in enumerate(events, start=1):
        ev.validate(row)
        ev = replace(ev, f_lo=snap(ev.f_lo), f_hi=snap(ev.f_hi), score=snap(ev.score))
        ev.validate(row)
        out.append(ev)
    out.sort(key=sort_key)
    return out


# --- flat -------------------------------------------------------------------


def format_flat_row(ev: EventRecord) -> str:
    return "\t".join(
        (
            ev.event_id,
            ev.run_id,
            ev.channel_id,
            format_iso_ms(ev.begin_time),
            format_iso_ms(ev.end_time),
            f"{ev.f_lo:.6f}",
            f"{ev.f_hi:.6f}",
            f"{ev.score:.6f}",
            ev.detector_id,
            ev.tag,
        )
    )


def flat_text(events: Sequence[EventRecord]) -> str:
    """Exact bytes of a flat store holding ``events`` (already canonical)."""
    return "".join(line + "\n" for line in [FLAT_HEADER, *map(format_flat_row, events)])


class FlatBackend:
    name = "flat"

    def __init__(self, row_limit: int | None = FLAT_ROW_LIMIT, on_limit: str = "warn"):
        self.row_limit = row_limit
        self.on_limit = on_limit

    def write(self, path, events: list[EventRecord]) -> None:
        if self.row_limit is not None and len(events) > self.row_limit:
            msg = f"flat store with {len(events)} rows exceeds {self.row_limit}; consider 'indexed'"
            if self.on_limit == "fail":
                raise ValidationError(msg)
            warnings.warn(msg, stacklevel=3)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(flat_text(events))

    def load(self, path) -> list[EventRecord]:
        with open(path, encoding="utf-8", newline="\n") as fh:
            header = fh.readline().rstrip("\n")
            if header != FLAT_HEADER:
                raise FormatError(f"flat: {path} has an unexpected header")
            out = []
            for n, line in enumerate(fh, start=2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 10:
                    raise FormatError(f"flat: {path} line {n} has {len(parts)} fields")
                try:
                    out.append(
                        EventRecord(
                            parts[0],
                            parts[1],
                            parts[2],
                            parse_iso_ms(parts[3]),
                            parse_iso_ms(parts[4]),
                            float(parts[5]),
                            float(parts[6]),
                            float(parts[7]),
                            parts[8],
                            parts[9],
                        )
                    )
                except ValueError as exc:
                    raise FormatError(f"flat: {path} line {n}: {exc}") from exc
        return out

    def query(self, path, q: Query) -> list[EventRecord]:
        return [ev for ev in self.load(path) if q.matches(ev)]


# --- binary row blocks shared by array and indexed ----------------------------


def encode_rows(events: Sequence[EventRecord]) -> bytes:
    num = np.empty(len(events), dtype=_NUM_DTYPE)
    num["begin"] = [e.begin_time for e in events]
    num["end"] = [e.end_time for e in events]
    num["f_lo"] = [e.f_lo for e in events]
    num["f_hi"] = [e.f_hi for e in events]
    num["score"] = [e.score for e in events]
    cols = [
        "\n".join(getattr(e, name) for e in events).encode("utf-8") for name in _STR_COLS
    ]
    head = struct.pack("<Q" + "Q" * len(cols), len(events), *map(len, cols))
    return head + num.tobytes() + b"".join(cols)


def decode_rows(buf: bytes, backend: str):
    """Numeric structured array plus one list of strings per string column."""
    nfmt = "<Q" + "Q" * len(_STR_COLS)
    hsize = struct.calcsize(nfmt)
    if len(buf) < hsize:
        raise FormatError(f"{backend}: truncated row block")
    n, *lens = struct.unpack_from(nfmt, buf)
    pos = hsize
    nbytes = n * _NUM_DTYPE.itemsize
    if len(buf) < pos + nbytes + sum(lens):
        raise FormatError(f"{backend}: truncated row block")
    num = np.frombuffer(buf, dtype=_NUM_DTYPE, count=n, offset=pos)
    pos += nbytes
    strings = []
    for ln in lens:
        raw = buf[pos : pos + ln].decode("utf-8")
        strings.append(raw.split("\n") if n else [])
        pos += ln
    if any(len(s) != n for s in strings):
        raise FormatError(f"{backend}: string column length mismatch")
    return num, strings


def rows_to_events(num, strings, idx: Iterable[int]) -> list[EventRecord]:
    ids, runs, chans, dets, tags = strings
    idx = np.asarray(list(idx) if not isinstance(idx, np.ndarray) else idx, dtype=np.int64)
    sub = num[idx]
    cols = zip(
        sub["begin"].tolist(),
        sub["end"].tolist(),
        sub["f_lo"].tolist(),
        sub["f_hi"].tolist(),
        sub["score"].tolist(),
        idx.tolist(),
    )
    return [
        EventRecord(ids[i], runs[i], chans[i], b, e, lo, hi, sc, dets[i], tags[i])
        for b, e, lo, hi, sc, i in cols
    ]


class ArrayBackend:
    name = "array"

    def write(self, path, events: list[EventRecord]) -> None:
        with open(path, "wb") as fh:
            fh.write(ARRAY_MAGIC)
            fh.write(encode_rows(events))

    def _image(self, path):
        data = Path(path).read_bytes()
        if not data.startswith(ARRAY_MAGIC):
            raise FormatError(f"array: {path} is not an array store")
        return decode_rows(data[len(ARRAY_MAGIC) :], "array")

    def load(self, path) -> list[EventRecord]:
        num, strings = self._image(path)
        return rows_to_events(num, strings, range(len(num)))

    def query(self, path, q: Query) -> list[EventRecord]:
        num, strings = self._image(path)
        keep = np.ones(len(num), dtype=bool)
        if q.time_range is not None:
            keep &= (num["begin"] >= q.time_range[0]) & (num["begin"] < q.time_range[1])
        if q.min_score is not None:
            keep &= num["score"] >= q.min_score
        if q.tag is not None:
            keep &= np.asarray(strings[4], dtype=object) == q.tag
        if q.detector is not None:
            keep &= np.asarray(strings[3], dtype=object) == q.detector
        return rows_to_events(num, strings, np.flatnonzero(keep))


# --- xml --------------------------------------------------------------------

_XML_FIELDS = ("run_id", "channel", "begin", "end", "low_hz", "high_hz", "score", "detector", "tag")


class XmlBackend:
    name = "xml"

    def write(self, path, events: list[EventRecord]) -> None:
        root = ET.Element("events")
        for ev in events:
            el = ET.SubElement(root, "event", id=ev.event_id)
            values = (
                ev.run_id,
                ev.channel_id,
                format_iso_ms(ev.begin_time),
                format_iso_ms(ev.end_time),
                f"{ev.f_lo:.6f}",
                f"{ev.f_hi:.6f}",
                f"{ev.score:.6f}",
                ev.detector_id,
                ev.tag,
            )
            for name, value in zip(_XML_FIELDS, values):
                ET.SubElement(el, name).text = value
        ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)

    def load(self, path) -> list[EventRecord]:
        try:
            root = ET.parse(path).getroot()
        except ET.ParseError as exc:
            raise FormatError(f"xml: {path}: {exc}") from exc
        if root.tag != "events":
            raise FormatError(f"xml: {path} root element is <{root.tag}>")
        out = []
        for el in root:
            vals = {child.tag: child.text or "" for child in el}
            try:
                out.append(
                    EventRecord(
                        el.get("id", ""),
                        vals["run_id"],
                        vals["channel"],
                        parse_iso_ms(vals["begin"]),
                        parse_iso_ms(vals["end"]),
                        float(vals["low_hz"]),
                        float(vals["high_hz"]),
                        float(vals["score"]),
                        vals["detector"],
                        vals["tag"],
                    )
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"xml: {path}: bad event element ({exc})") from exc
        return out

    def query(self, path, q: Query) -> list[EventRecord]:
        return [ev for ev in self.load(path) if q.matches(ev)]


# --- indexed ----------------------------------------------------------------

_IDX_HEAD = struct.Struct("<QQQQQ")  # n_records, page_size, n_pages, dir_offset, score_offset


@dataclass
class ReadStats:
    pages_read: int = 0
    records_read: int = 0


class IndexedReader:
    """Open handle on an indexed store; counts the pages and records it decodes."""

    def __init__(self, path):
        self.path = Path(path)
        self.stats = ReadStats()
        with open(self.path, "rb") as fh:
            magic = fh.read(len(INDEX_MAGIC))
            if magic != INDEX_MAGIC:
                raise FormatError(f"indexed: {path} is not an indexed store")
            head = fh.read(_IDX_HEAD.size)
            if len(head) != _IDX_HEAD.size:
                raise FormatError(f"indexed: {path} header truncated")
            self.n, self.page_size, self.n_pages, dir_off, score_off = _IDX_HEAD.unpack(head)
            fh.seek(dir_off)
            d = np.frombuffer(fh.read(self.n_pages * 24), dtype="<i8")
            if d.size != self.n_pages * 3:
                raise FormatError(f"indexed: {path} page directory truncated")
            d = d.reshape(-1, 3)
            self.page_offset, self.page_length, self.page_first = d[:, 0], d[:, 1], d[:, 2]
            fh.seek(score_off)
            self.score_keys = np.frombuffer(fh.read(self.n * 8), dtype="<f8")
            self.score_rank = np.frombuffer(fh.read(self.n * 8), dtype="<i8")
            if self.score_keys.size != self.n or self.score_rank.size != self.n:
                raise FormatError(f"indexed: {path} score index truncated")

    def _page(self, fh, p: int):
        fh.seek(int(self.page_offset[p]))
        num, strings = decode_rows(fh.read(int(self.page_length[p])), "indexed")
        self.stats.pages_read += 1
        self.stats.records_read += len(num)
        return num, strings

    def _read(self, pages: Iterable[int], want=None) -> list[EventRecord]:
        out = []
        with open(self.path, "rb") as fh:
            for p in pages:
                num, strings = self._page(fh, p)
                if want is None:
                    idx = range(len(num))
                else:
                    idx = sorted(want[p])
                out.extend(rows_to_events(num, strings, idx))
        return out

    def load(self) -> list[EventRecord]:
        return self._read(range(self.n_pages))

    def _time_pages(self, start: int, stop: int) -> range:
        first = self.page_first.tolist()
        lo = max(bisect_left(first, start) - 1, 0)
        hi = bisect_left(first, stop)
        return range(lo, max(lo, hi))

    def query(self, q: Query) -> list[EventRecord]:
        if self.n == 0:
            return []
        time_pages = self._time_pages(*q.time_range) if q.time_range else None
        score_ranks = None
        if q.min_score is not None:
            cut = int(np.searchsorted(self.score_keys, q.min_score, side="left"))
            score_ranks = self.score_rank[cut:]
        if score_ranks is not None and (
            time_pages is None or len(score_ranks) < len(time_pages) * self.page_size
        ):
            want: dict[int, set[int]] = {}
            for r in score_ranks.tolist():
                want.setdefault(r // self.page_size, set()).add(r % self.page_size)
            candidates = self._read(sorted(want), want)
        elif time_pages is not None:
            candidates = self._read(time_pages)
        else:
            candidates = self.load()
        return sorted((ev for ev in candidates if q.matches(ev)), key=sort_key)


class IndexedBackend:
    name = "indexed"

    def __init__(self, page_size: int = PAGE_SIZE):
        self.page_size = page_size

    def write(self, path, events: list[EventRecord]) -> None:
        n = len(events)
        pages = [events[i : i + self.page_size] for i in range(0, n, self.page_size)]
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(_IDX_HEAD.pack(0, 0, 0, 0, 0))
            directory = []
            for page in pages:
                blob = encode_rows(page)
                directory.append((fh.tell(), len(blob), page[0].begin_time))
                fh.write(blob)
            dir_off = fh.tell()
            fh.write(np.asarray(directory, dtype="<i8").reshape(-1).tobytes())
            score_off = fh.tell()
            scores = np.array([e.score for e in events], dtype="<f8")
            order = np.argsort(scores, kind="stable").astype("<i8")
            fh.write(scores[order].tobytes())
            fh.write(order.tobytes())
            fh.seek(len(INDEX_MAGIC))
            fh.write(_IDX_HEAD.pack(n, self.page_size, len(pages), dir_off, score_off))

    def load(self, path) -> list[EventRecord]:
        return IndexedReader(path).load()

    def query(self, path, q: Query) -> list[EventRecord]:
        return IndexedReader(path).query(q)


def get_backend(name: str):
    try:
        return {
            "flat": FlatBackend,
            "array": ArrayBackend,
            "xml": XmlBackend,
            "indexed": IndexedBackend,
        }[name]()
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}") from None


def detect_backend(path) -> str:
    """Guess a store's backend from its first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(64)
    if head.startswith(ARRAY_MAGIC):
        return "array"
    if head.startswith(INDEX_MAGIC):
        return "indexed"
    if head.startswith(FLAT_HEADER.encode()[:32]):
        return "flat"
    if head.lstrip().startswith(b"<"):
        return "xml"
    raise FormatError(f"{path}: unrecognised store format")


def store_write(backend: str, path, events: Iterable[EventRecord], **options) -> int:
    """Validate, canonicalize and persist ``events``; returns the count written."""
    be = FlatBackend(**options) if backend == "flat" and options else get_backend(backend)
    rows = canonicalize(events)
    try:
        be.write(path, rows)
    except OSError as exc:
        raise OSError(f"{backend}: cannot write {path}: {exc}") from exc
    return len(rows)


def store_load(backend: str, path) -> list[EventRecord]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{backend}: no store at {path}")
    return get_backend(backend).load(path)


def store_query(backend: str, path, predicate: Query | None = None) -> list[EventRecord]:
    """Events satisfying every set field of ``predicate``, sorted by begin time."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"{backend}: no store at {path}")
    q = predicate or Query()
    return sorted(get_backend(backend).query(path, q), key=sort_key)


# --- benchmark --------------------------------------------------------------

BENCH_TAGS = ("upcall", "pulse_train", "gunshot", "noise", "unknown")
BENCH_DETECTORS = ("type1", "type2", "template", "hog_ann")
BENCH_ORDER = ("indexed", "array", "flat", "xml")
_YEAR_MS = 365 * 24 * 3600 * 1000
_BENCH_T0 = 1_136_073_600_000  # 2006-01-01T00:00:00Z


def dummy_events(n: int, seed: int = 0, run_id: str = "bench") -> list[EventRecord]:
    """Seeded random events spread over one year (``numpy.random.default_rng``)."""
    rng = np.random.default_rng(seed)
    begin = np.sort(_BENCH_T0 + rng.integers(0, _YEAR_MS, size=n))
    dur = rng.integers(200, 5000, size=n)
    f_lo = np.round(rng.uniform(10.0, 900.0, size=n), 6)
    f_hi = np.round(f_lo + rng.uniform(5.0, 500.0, size=n), 6)
    score = np.round(rng.uniform(0.0, 1.0, size=n), 6)
    tags = rng.integers(0, len(BENCH_TAGS), size=n)
    dets = rng.integers(0, len(BENCH_DETECTORS), size=n)
    chans = rng.integers(0, 8, size=n)
    return [
        EventRecord(
            f"{run_id}:{i}",
            run_id,
            f"CH{int(chans[i])}",
            int(begin[i]),
            int(begin[i] + dur[i]),
            float(f_lo[i]),
            float(f_hi[i]),
            float(score[i]),
            BENCH_DETECTORS[int(dets[i])],
            BENCH_TAGS[int(tags[i])],
        )
        for i in range(n)
    ]


def bench_queries() -> list[Query]:
    """The fixed three-predicate suite timed for every backend."""
    day = 24 * 3600 * 1000
    return [
        Query(time_range=(_BENCH_T0 + 100 * day, _BENCH_T0 + 101 * day)),
        Query(time_range=(_BENCH_T0 + 200 * day, _BENCH_T0 + 207 * day), min_score=0.9),
        Query(min_score=0.999, tag="upcall"),
    ]


@dataclass
class BackendTiming:
    load_s: float
    query_s: float

    @property
    def total_s(self) -> float:
        return self.load_s + self.query_s

    @property
    def extrapolated_s(self) -> float:
        """Linear model: ten times the data takes ten times as long."""
        return 10.0 * self.total_s


@dataclass
class BenchReport:
    n_events: int
    seed: int
    timings: dict[str, BackendTiming] = field(default_factory=dict)
    query_counts: list[int] = field(default_factory=list)

    def ordering(self) -> list[str]:
        return sorted(self.timings, key=lambda b: self.timings[b].query_s)

    @property
    def ordering_ok(self) -> bool:
        return tuple(self.ordering()) == BENCH_ORDER

    @property
    def verdict(self) -> str:
        order = " < ".join(self.ordering())
        return f"{order} ({'as expected' if self.ordering_ok else 'UNEXPECTED ORDER'})"

    def table(self) -> str:
        rows = ["backend\tload_s\tquery_s\ttotal_s\textrapolated_10x_s"]
        for b in BENCH_ORDER:
            if b in self.timings:
                t = self.timings[b]
                rows.append(f"{b}\t{t.load_s:.6f}\t{t.query_s:.6f}\t{t.total_s:.6f}\t{t.extrapolated_s:.6f}")
        return "\n".join(rows)


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return max(statistics.median(times), 1e-9)


def store_benchmark(
    n_events: int = 100_000,
    seed: int = 0,
    repeats: int = 5,
    backends: Sequence[str] = BACKENDS,
    workdir=None,
) -> BenchReport:
    """Time full loads and the query suite per backend (median of ``repeats`` runs)."""
    if n_events < 1000:
        raise ValueError("benchmark needs at least 1000 events")
    events = dummy_events(n_events, seed)
    queries = bench_queries()
    report = BenchReport(n_events, seed)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for b in backends:
            path = os.path.join(tmp, f"bench.{b}")
            store_write(b, path, events)
            load_s = _median_time(lambda: store_load(b, path), repeats)
            query_s = _median_time(lambda: [store_query(b, path, q) for q in queries], repeats)
            report.timings[b] = BackendTiming(load_s, query_s)
            if not report.query_counts:
                report.query_counts = [len(store_query(b, path, q)) for q in queries]
    return report
