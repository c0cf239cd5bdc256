"""Map/gather scheduling of detector x work-unit tasks over a worker pool.

Workers pull task ids from one shared queue until they receive a stop
sentinel. Each task reads its unit, runs its detector and hands back partial
events; a failing task is recorded and never stops the run. After the
barrier, :func:`gather` reconciles duplicates reported in overlapping pads
and assigns final event ids, so the merged output does not depend on the
number of workers.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import os
import queue
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .archive import ArchiveManifest, WorkUnit, partition, read_samples
from .errors import ConfigError, ConsistencyError, PlanError
from .eventstore import ArrayBackend, store_write
from .events import EventRecord, canonical_key
from .registry import DetectorConfig, Pipeline, Registry

log = logging.getLogger(__name__)

SPILL_THRESHOLD = 100_000


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    detectors: tuple[DetectorConfig, ...]
    unit_len: float
    pad: float | None = None  # None: longest detector context_pad
    workers: int = 1
    backend: str = "flat"
    output: str | None = None
    run_id: str | None = None
    merge_dt: float = 0.5
    merge_df: float = 10.0

    @property
    def effective_pad(self) -> float:
        if self.pad is not None:
            return self.pad
        return max((d.context_pad for d in self.detectors), default=0.0)

    @property
    def effective_run_id(self) -> str:
        return self.run_id or self.job_id


@dataclass(frozen=True)
class Task:
    task_id: int
    detector_id: str
    unit_index: int
    unit: WorkUnit


@dataclass(frozen=True)
class TaskPlan:
    job: JobSpec
    manifest: ArchiveManifest
    units: tuple[WorkUnit, ...]
    tasks: tuple[Task, ...]
    warnings: tuple[str, ...] = ()

    def detector(self, detector_id: str) -> DetectorConfig:
        for d in self.job.detectors:
            if d.detector_id == detector_id:
                return d
        raise PlanError(f"unknown detector id {detector_id!r}")

    def neighbours(self) -> dict[int, tuple[int | None, int | None]]:
        """Unit index -> (previous, next) contiguous unit of the same channel."""
        out: dict[int, tuple[int | None, int | None]] = {}
        for i, u in enumerate(self.units):
            prev = i - 1 if i > 0 else None
            if prev is not None and not _contiguous(self.units[prev], u):
                prev = None
            nxt = i + 1 if i + 1 < len(self.units) else None
            if nxt is not None and not _contiguous(u, self.units[nxt]):
                nxt = None
            out[i] = (prev, nxt)
        return out


def _contiguous(a: WorkUnit, b: WorkUnit) -> bool:
    return a.channel_id == b.channel_id and abs(a.core_span[1] - b.core_span[0]) < 1e-9


def plan(job: JobSpec, manifest: ArchiveManifest) -> TaskPlan:
    """Detector-major, time-minor Cartesian product of detectors and work units."""
    if job.workers < 1:
        raise PlanError("workers must be >= 1")
    if not job.detectors:
        raise PlanError("job lists no detectors")
    try:
        Registry(job.detectors)
    except (ConfigError, PlanError) as exc:
        raise PlanError(str(exc)) from exc
    pad = job.effective_pad
    if not job.unit_len > pad >= 0:
        raise PlanError(f"need unit_len > pad >= 0, got unit_len={job.unit_len}, pad={pad}")
    warnings = []
    if not manifest.entries:
        warnings.append("manifest has no entries; nothing to do")
        log.warning(warnings[-1])
        units: list[WorkUnit] = []
    else:
        units = partition(manifest, job.unit_len, pad)
    tasks = []
    for det in job.detectors:
        for k, u in enumerate(units):
            tasks.append(Task(len(tasks), det.detector_id, k, u))
    return TaskPlan(job, manifest, tuple(units), tuple(tasks), tuple(warnings))


# --- execution ----------------------------------------------------------------


@dataclass(frozen=True)
class TaskRecord:
    task_id: int
    detector_id: str
    channel_id: str
    t0: float
    t1: float
    status: str
    wall_ms: float
    n_events: int
    worker: int

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunReport:
    job_id: str
    run_id: str
    events: list[EventRecord]
    tasks: list[TaskRecord]
    wall_s: float
    workers: int
    merged_duplicates: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(not t.ok for t in self.tasks)

    @property
    def totals(self) -> dict:
        return {
            "tasks": len(self.tasks),
            "failures": self.failures,
            "wall_s": self.wall_s,
            "events": len(self.events),
        }

    def summary(self) -> str:
        lines = [
            f"job {self.job_id} (run {self.run_id}) on {self.workers} worker(s)",
            f"tasks: {len(self.tasks)}  failures: {self.failures}  "
            f"events: {len(self.events)}  merged duplicates: {self.merged_duplicates}",
            f"wall time: {self.wall_s:.3f} s",
        ]
        for t in self.tasks:
            if not t.ok:
                lines.append(f"  task {t.task_id} [{t.detector_id} {t.channel_id} {t.t0:g}-{t.t1:g} s]: {t.status}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)

    def task_table(self) -> str:
        rows = ["task_id\tdetector\tt0\tt1\tstatus\twall_ms\tn_events"]
        for t in self.tasks:
            rows.append(
                f"{t.task_id}\t{t.detector_id}\t{t.t0:.6f}\t{t.t1:.6f}\t{t.status}\t{t.wall_ms:.3f}\t{t.n_events}"
            )
        return "\n".join(rows) + "\n"


Resolver = Callable[[DetectorConfig], Callable]


def _run_one(task: Task, plan_: TaskPlan, pipelines: dict, resolver: Resolver):
    start = time.perf_counter()
    try:
        pipe = pipelines.get(task.detector_id)
        if pipe is None:
            pipe = pipelines[task.detector_id] = resolver(plan_.detector(task.detector_id))
        block = read_samples(task.unit, plan_.manifest)
        events = list(pipe(block))
        status = "ok"
    except Exception as exc:  # a failed task must not abort the run
        events = []
        status = f"failed({type(exc).__name__}: {exc})"
    return events, status, 1000.0 * (time.perf_counter() - start)


def _payload(events, task_id, spill_threshold, spill_dir):
    if len(events) > spill_threshold:
        path = os.path.join(spill_dir, f"task-{task_id}.arr")
        ArrayBackend().write(path, events)
        return ("spill", path)
    return ("events", events)


def _worker_loop(worker, plan_, tasks_q, results_q, resolver, spill_threshold, spill_dir):
    pipelines: dict = {}
    by_id = {t.task_id: t for t in plan_.tasks}
    while True:
        tid = tasks_q.get()
        if tid is None:
            break
        events, status, wall = _run_one(by_id[tid], plan_, pipelines, resolver)
        try:
            payload = _payload(events, tid, spill_threshold, spill_dir)
        except Exception as exc:
            payload, status = ("events", []), f"failed({type(exc).__name__}: {exc})"
        results_q.put((tid, worker, status, wall, payload))


def execute(
    plan_: TaskPlan,
    workers: int | None = None,
    executor: str = "auto",
    resolver: Resolver = Pipeline,
    spill_threshold: int = SPILL_THRESHOLD,
) -> RunReport:
    """Run every task on ``workers`` pulling from a shared queue, then gather.

    ``executor`` is ``"process"`` (fork-based worker processes), ``"thread"``
    or ``"serial"``; ``"auto"`` picks serial for one worker and processes
    otherwise.
    """
    w = plan_.job.workers if workers is None else workers
    if w < 1:
        raise ValueError("workers must be >= 1")
    if executor == "auto":
        executor = "serial" if w == 1 else "process"
    if executor not in ("serial", "thread", "process"):
        raise ValueError(f"unknown executor {executor!r}")

    spill_dir = tempfile.mkdtemp(prefix="adamine-spill-")
    results: dict[int, tuple] = {}
    t_start = time.perf_counter()
    try:
        if executor == "serial":
            pipelines: dict = {}
            for task in plan_.tasks:
                events, status, wall = _run_one(task, plan_, pipelines, resolver)
                results[task.task_id] = (0, status, wall, ("events", events))
        else:
            _run_pool(plan_, w, executor, resolver, spill_threshold, spill_dir, results)
        partials: dict[int, list[EventRecord]] = {}
        records = []
        for task in plan_.tasks:
            worker, status, wall, (kind, data) = results[task.task_id]
            if kind == "spill":
                events = ArrayBackend().load(data)
                os.unlink(data)
            else:
                events = data
            partials[task.task_id] = events
            u = task.unit
            records.append(
                TaskRecord(task.task_id, task.detector_id, u.channel_id, u.core_span[0], u.core_span[1],
                           status, wall, len(events), worker)
            )
    finally:
        shutil.rmtree(spill_dir, ignore_errors=True)

    merged = gather(partials, plan_, (plan_.job.merge_dt, plan_.job.merge_df), plan_.job.effective_run_id)
    wall_s = time.perf_counter() - t_start
    n_in = sum(len(v) for v in partials.values())
    return RunReport(
        plan_.job.job_id,
        plan_.job.effective_run_id,
        merged.events,
        records,
        wall_s,
        w,
        n_in - len(merged.events),
        list(plan_.warnings),
    )


def _run_pool(plan_, w, executor, resolver, spill_threshold, spill_dir, results) -> None:
    if executor == "process":
        ctx = mp.get_context("fork")
        tasks_q, results_q = ctx.Queue(), ctx.Queue()
        spawn = ctx.Process
    else:
        tasks_q, results_q = queue.Queue(), queue.Queue()
        spawn = threading.Thread
    for t in plan_.tasks:
        tasks_q.put(t.task_id)
    for _ in range(w):
        tasks_q.put(None)
    workers = [
        spawn(
            target=_worker_loop,
            args=(k, plan_, tasks_q, results_q, resolver, spill_threshold, spill_dir),
            daemon=True,
        )
        for k in range(w)
    ]
    for p in workers:
        p.start()
    pending = {t.task_id for t in plan_.tasks}
    while pending:
        try:
            tid, worker, status, wall, payload = results_q.get(timeout=0.5)
        except queue.Empty:
            if not any(p.is_alive() for p in workers):
                # drain anything that raced in, then give up on the rest
                try:
                    while True:
                        tid, worker, status, wall, payload = results_q.get_nowait()
                        results[tid] = (worker, status, wall, payload)
                        pending.discard(tid)
                except queue.Empty:
                    pass
                for tid in sorted(pending):
                    results[tid] = (-1, "failed(worker exited)", 0.0, ("events", []))
                pending.clear()
            continue
        results[tid] = (worker, status, wall, payload)
        pending.discard(tid)
    for p in workers:
        p.join()


# --- gather -------------------------------------------------------------------


@dataclass
class GatherResult:
    events: list[EventRecord]
    retained: dict[int, list[EventRecord]]  # surviving partials, per task, pre-id
    merged_into: dict[tuple[int, int], tuple[int, int]]  # dropped (task, idx) -> kept (task, idx)


def _find(parent: dict, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def gather(
    partials: Mapping[int, Sequence[EventRecord]],
    plan_: TaskPlan,
    merge_tol: tuple[float, float] = (0.5, 10.0),
    run_id: str | None = None,
) -> GatherResult:
    """Merge per-task events, collapsing duplicates seen by adjacent units.

    An event lying wholly inside its unit's pad is compared with the events
    of the same detector from the neighbouring unit on that side; they merge
    when both time edges are within ``dt`` seconds and both frequency edges
    within ``df`` Hz. Each merged cluster keeps its highest-scoring member.
    """
    tasks = {t.task_id: t for t in plan_.tasks}
    unknown = sorted(set(partials) - set(tasks))
    if unknown:
        raise ConsistencyError(f"partials reference unknown tasks {unknown}")
    run_id = run_id or plan_.job.effective_run_id
    dt_ms, df = merge_tol[0] * 1000.0, merge_tol[1]
    task_at = {(t.detector_id, t.unit_index): t.task_id for t in plan_.tasks}
    neighbours = plan_.neighbours()
    epochs = {ch: plan_.manifest.epoch(ch).timestamp() for ch in plan_.manifest.channels()}

    parent: dict[tuple[int, int], tuple[int, int]] = {}
    candidate: set[tuple[int, int]] = set()
    for tid in sorted(partials):
        for idx in range(len(partials[tid])):
            parent[(tid, idx)] = (tid, idx)

    def close(a: EventRecord, b: EventRecord) -> bool:
        return (
            abs(a.begin_time - b.begin_time) <= dt_ms
            and abs(a.end_time - b.end_time) <= dt_ms
            and abs(a.f_lo - b.f_lo) <= df
            and abs(a.f_hi - b.f_hi) <= df
        )

    for tid in sorted(partials):
        task = tasks[tid]
        u = task.unit
        epoch = epochs.get(u.channel_id, 0.0)
        core0 = (epoch + u.core_span[0]) * 1000.0
        core1 = (epoch + u.core_span[1]) * 1000.0
        prev, nxt = neighbours.get(task.unit_index, (None, None))
        for idx, ev in enumerate(partials[tid]):
            if u.pad_before > 0 and ev.end_time <= core0:
                other = prev
            elif u.pad_after > 0 and ev.begin_time >= core1:
                other = nxt
            else:
                continue
            candidate.add((tid, idx))
            if other is None:
                continue
            otid = task_at.get((task.detector_id, other))
            if otid is None or otid not in partials:
                continue
            for jdx, o in enumerate(partials[otid]):
                if close(ev, o):
                    ra, rb = _find(parent, (tid, idx)), _find(parent, (otid, jdx))
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)

    clusters: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for key in sorted(parent):
        clusters.setdefault(_find(parent, key), []).append(key)

    retained: dict[int, list[EventRecord]] = {tid: [] for tid in partials}
    keep_keys: set[tuple[int, int]] = set()
    merged_into: dict[tuple[int, int], tuple[int, int]] = {}
    for members in clusters.values():
        best = min(members, key=lambda k: (-partials[k[0]][k[1]].score, k in candidate, k))
        keep_keys.add(best)
        for k in members:
            if k != best:
                merged_into[k] = best
    for tid in sorted(partials):
        retained[tid] = [ev for idx, ev in enumerate(partials[tid]) if (tid, idx) in keep_keys]

    ordered = sorted((ev for evs in retained.values() for ev in evs), key=canonical_key)
    events = [ev.with_ids(f"{run_id}:{i}", run_id) for i, ev in enumerate(ordered)]
    return GatherResult(events, retained, merged_into)


# --- whole job ----------------------------------------------------------------


def run_job(job: JobSpec, manifest: ArchiveManifest, executor: str = "auto") -> RunReport:
    """plan -> execute -> gather -> store_write (when the job names an output)."""
    report = execute(plan(job, manifest), job.workers, executor)
    if job.output:
        store_write(job.backend, job.output, report.events)
    return report
