"""``adamine`` command-line interface.

Exit codes: 0 success, 1 fatal I/O, 2 bad input path, 3 validation failure.
Tables are tab-separated with ``#`` metadata lines (tool version, seed,
config hash) ahead of the header row.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ada import execute, plan
from .archive import DEFAULT_PATTERN, ArchiveManifest, read_span, scan_archive
from .classify import HumanScore, hk_augment, mlp_predict, mlp_train, read_scores, write_scores
from .config import JobConfig, load_config
from .dsp import stft, write_pgm
from .errors import (
    AdamineError,
    ArchiveError,
    ConfigError,
    DecodeError,
    FormatError,
    GapInData,
    PlanError,
    ValidationError,
)
from .evalkit import curve, curve_svg, diel_aggregate, match_events, tpr_at_fpr
from .eventstore import (
    detect_backend,
    flat_text,
    store_benchmark,
    store_load,
    store_write,
)
from .events import EventRecord, format_iso_ms
from .synthbench import render_scene, write_scene_archive

log = logging.getLogger("adamine")

EXIT_OK, EXIT_IO, EXIT_PATH, EXIT_INVALID = 0, 1, 2, 3
CLIP_PAD = 1.0  # seconds of context either side of an exported clip


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --- helpers --------------------------------------------------------------------


def _meta_lines(**meta) -> str:
    lines = [f"# adamine {__version__}"]
    lines += [f"# {k}: {v}" for k, v in meta.items() if v is not None]
    return "\n".join(lines) + "\n"


def _write_table(path, body: str, **meta) -> None:
    _write_text(path, _meta_lines(**meta) + body)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}", EXIT_PATH)
    return p


def _load_store(path) -> tuple[str, list[EventRecord]]:
    p = _need_file(path, "event store")
    try:
        backend = detect_backend(p)
        return backend, store_load(backend, p)
    except (FormatError, ValidationError, ValueError) as exc:
        raise CliError(f"{p}: {exc}", EXIT_INVALID) from exc
    except OSError as exc:
        raise CliError(f"{p}: {exc}", EXIT_IO) from exc


def _load_job(path) -> JobConfig:
    _need_file(path, "config")
    try:
        return load_config(path)
    except (ConfigError, PlanError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc


def _prepare_archive(cfg: JobConfig) -> ArchiveManifest:
    """Render the synthetic scene if one is declared, then scan or read the manifest."""
    if cfg.scene is not None:
        scene = render_scene(cfg.scene)
        try:
            write_scene_archive(scene, cfg.archive_root, cfg.scene_file_len)
            if cfg.truth_path is not None:
                store_write("flat", cfg.truth_path, scene.truth)
        except OSError as exc:
            raise CliError(f"cannot write scene archive: {exc}", EXIT_IO) from exc
    if cfg.manifest_path is not None:
        try:
            return ArchiveManifest.read(cfg.manifest_path)
        except FileNotFoundError as exc:
            raise CliError(f"manifest not found: {cfg.manifest_path}", EXIT_PATH) from exc
        except FormatError as exc:
            raise CliError(str(exc), EXIT_INVALID) from exc
    if not cfg.archive_root.is_dir():
        raise CliError(f"archive root not found: {cfg.archive_root}", EXIT_PATH)
    try:
        return scan_archive(cfg.archive_root, cfg.pattern)
    except ArchiveError as exc:
        raise CliError(str(exc), EXIT_PATH) from exc


def _plan(cfg: JobConfig, manifest: ArchiveManifest):
    try:
        return plan(cfg.job, manifest)
    except (PlanError, ConfigError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc


def _workers(text: str) -> list[int]:
    try:
        ws = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad worker list {text!r}") from None
    if not ws or min(ws) < 1:
        raise argparse.ArgumentTypeError("worker counts must be >= 1")
    return ws


def machine_features(events) -> np.ndarray:
    """Per-event machine features: duration, bandwidth, centre frequency, detector score."""
    return np.array(
        [[e.duration, e.f_hi - e.f_lo, 0.5 * (e.f_lo + e.f_hi), e.score] for e in events],
        dtype=np.float64,
    ).reshape(len(events), 4)


MACHINE_FEATURES = ("duration", "bandwidth", "centre_freq", "score")


def scores_path(store) -> Path:
    """Sidecar file holding the human scores attached to a store."""
    return Path(str(store) + ".scores.tsv")


# --- subcommands ------------------------------------------------------------------


def cmd_scan(args) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise CliError(f"archive root not readable: {root}", EXIT_PATH)
    try:
        manifest = scan_archive(root, args.pattern)
    except ArchiveError as exc:
        raise CliError(str(exc), EXIT_PATH) from exc
    try:
        manifest.write(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    print(f"{len(manifest.entries)} entries, {len(manifest.skipped)} skipped -> {args.out}")
    for path, reason in manifest.skipped:
        print(f"skipped {path}: {reason}", file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_job(args.config)
    manifest = _prepare_archive(cfg)
    p = _plan(cfg, manifest)
    workers = args.workers or cfg.job.workers
    report = execute(p, workers)
    if cfg.job.output:
        try:
            n = store_write(cfg.job.backend, cfg.job.output, report.events)
        except OSError as exc:
            raise CliError(str(exc), EXIT_IO) from exc
        print(f"wrote {n} events ({cfg.job.backend}) -> {cfg.job.output}")
    print(report.summary())
    meta = cfg.metadata()
    if args.tasks:
        _write_table(args.tasks, report.task_table(), **meta)
    if args.diel or args.figure:
        diel = diel_aggregate(report.events, args.offset)
        if args.diel:
            _write_table(args.diel, diel.to_tsv(), utc_offset=args.offset, **meta)
        if args.figure:
            from .plotting import plot_diel

            plot_diel(diel, args.figure)
    return EXIT_OK


def cmd_bench_store(args) -> int:
    if args.n < 1000:
        raise CliError("--n must be at least 1000", EXIT_INVALID)
    report = store_benchmark(args.n, args.seed, args.repeats)
    body = report.table() + "\n"
    print(_meta_lines(seed=args.seed, n_events=args.n) + body, end="")
    print(f"query-time ordering: {report.verdict}")
    print("query result counts: " + ", ".join(str(c) for c in report.query_counts))
    if args.out:
        _write_table(args.out, body, seed=args.seed, n_events=args.n)
    if args.figure:
        from .plotting import plot_bench

        plot_bench(report, args.figure)
    return EXIT_OK


def cmd_bench_scale(args) -> int:
    cfg = _load_job(args.config)
    manifest = _prepare_archive(cfg)
    p = _plan(cfg, manifest)
    walls = []
    rows = ["workers\twall_s\tspeedup\tevents\tfailures"]
    reference = None
    for w in args.workers:
        best = min((execute(p, w) for _ in range(args.repeats)), key=lambda r: r.wall_s)
        walls.append(best.wall_s)
        text = flat_text(best.events)
        if reference is None:
            reference = text
        elif text != reference:
            raise CliError(f"merged events at W={w} differ from W={args.workers[0]}", EXIT_INVALID)
        rows.append(f"{w}\t{best.wall_s:.6f}\t{walls[0] / best.wall_s:.3f}\t{len(best.events)}\t{best.failures}")
    body = "\n".join(rows) + "\n"
    meta = dict(cfg.metadata(), cpu_count=os.cpu_count())
    print(_meta_lines(**meta) + body, end="")
    if args.out:
        _write_table(args.out, body, **meta)
    if args.figure:
        from .plotting import plot_scaling

        plot_scaling(args.workers, walls, args.figure)
    return EXIT_OK


def cmd_eval(args) -> int:
    _, detected = _load_store(args.store)
    _, truth = _load_store(args.truth)
    match = match_events(detected, truth, args.min_iou)
    scores = [e.score for e in detected]
    labels = list(match.labels)
    try:
        c = curve(scores, labels, args.kind)
    except ValueError as exc:
        raise CliError(f"cannot build {args.kind} curve: {exc}", EXIT_INVALID) from exc
    body = c.to_tsv()
    tail = ""
    if args.fpr is not None:
        if args.kind == "pr":
            raise CliError("--fpr needs --kind roc or det", EXIT_INVALID)
        tail = f"# tpr_at_fpr\t{args.fpr:g}\t{tpr_at_fpr(c, args.fpr):.6f}\n"
    meta = dict(
        store=args.store, store_hash=_file_hash(args.store), truth=args.truth, min_iou=args.min_iou
    )
    _write_table(args.out, body + tail, **meta)
    print(
        f"{len(detected)} detections, {match.matched_truth}/{match.n_truth} truth events matched, "
        f"{match.false_positives} false positives"
    )
    if c.auc is not None:
        print(f"AUC = {c.auc:.6f}")
    if tail:
        print(tail.lstrip("# ").strip())
    if args.svg:
        _write_text(args.svg, curve_svg({Path(args.store).name: c}))
    if args.figure:
        from .plotting import plot_curves

        plot_curves({Path(args.store).name: c}, args.figure, args.fpr)
    return EXIT_OK


def _clip_samples(manifest: ArchiveManifest, ev: EventRecord, pad: float):
    ch = ev.channel_id
    if ch not in manifest.channels():
        raise ValidationError(f"channel {ch!r} not in manifest")
    rate = manifest.sample_rate(ch)
    epoch = manifest.epoch(ch).timestamp()
    a = int(np.floor((ev.begin_time / 1000.0 - pad - epoch) * rate))
    b = int(np.ceil((ev.end_time / 1000.0 + pad - epoch) * rate))
    for s0, s1, idx in manifest.segments(ch):
        if s0 <= (a + b) // 2 < s1:
            a, b = max(a, s0), min(b, s1)
            return read_span(manifest, ch, a, b - a, idx), rate, epoch + a / rate
    raise ValidationError(f"event {ev.event_id} lies outside the recorded timeline")


def cmd_export_clips(args) -> int:
    _, events = _load_store(args.store)
    mpath = _need_file(args.archive, "manifest")
    try:
        manifest = ArchiveManifest.read(mpath)
    except FormatError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from exc
    rows = ["file\tevent_id\tchannel\tbegin_iso8601\tend_iso8601\tlow_hz\thigh_hz\tscore\tdetector\ttag\tclip_start_iso8601"]
    failed = 0
    for ev in events:
        try:
            samples, rate, t0 = _clip_samples(manifest, ev, args.pad)
            spec = stft(samples, args.window_len, args.hop, "hann", sample_rate=rate, t_start=t0)
        except (ValidationError, GapInData, DecodeError, AdamineError, OSError) as exc:
            print(f"skipped {ev.event_id}: {exc}", file=sys.stderr)
            failed += 1
            continue
        name = f"{ev.event_id}.pgm"
        try:
            write_pgm(out / name, spec.magnitudes)
        except OSError as exc:
            raise CliError(f"cannot write {out / name}: {exc}", EXIT_IO) from exc
        rows.append(
            "\t".join(
                [
                    name, ev.event_id, ev.channel_id, format_iso_ms(ev.begin_time), format_iso_ms(ev.end_time),
                    f"{ev.f_lo:.6f}", f"{ev.f_hi:.6f}", f"{ev.score:.6f}", ev.detector_id, ev.tag,
                    format_iso_ms(int(round(t0 * 1000))),
                ]
            )
        )
    _write_table(out / "index.tsv", "\n".join(rows) + "\n", store=args.store, pad_s=args.pad)
    print(f"exported {len(events) - failed} clips to {out} ({failed} skipped)")
    return EXIT_OK


def cmd_import_scores(args) -> int:
    src = _need_file(args.file, "score file")
    _, events = _load_store(args.store)
    try:
        incoming = read_scores(src)
    except (FormatError, ValidationError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    known = {e.event_id for e in events}
    unknown = sorted({s.event_id for s in incoming} - known)
    if unknown:
        raise CliError("unknown event ids: " + ", ".join(unknown), EXIT_INVALID)
    side = scores_path(args.store)
    merged: dict[tuple[str, str], HumanScore] = {}
    if side.exists():
        for s in read_scores(side):
            merged[(s.event_id, s.analyst_id)] = s
    seen = set()
    for s in incoming:
        key = (s.event_id, s.analyst_id)
        if key in seen:
            raise CliError(f"duplicate score for {key} in {src}", EXIT_INVALID)
        seen.add(key)
        merged[key] = s
    try:
        write_scores(side, [merged[k] for k in sorted(merged)])
    except OSError as exc:
        raise CliError(f"cannot write {side}: {exc}", EXIT_IO) from exc
    print(f"attached {len(incoming)} scores ({len(merged)} total) -> {side}")
    return EXIT_OK


def cmd_post_train(args) -> int:
    _, events = _load_store(args.store)
    spath = _need_file(args.scores, "score file") if args.scores else scores_path(args.store)
    if not Path(spath).is_file():
        raise CliError(f"score file not found: {spath}", EXIT_PATH)
    try:
        scores = read_scores(spath)
        ids = [e.event_id for e in events]
        x = hk_augment(machine_features(events), ids, scores, args.aggregate)
    except (FormatError, ValidationError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    if args.truth:
        _, truth = _load_store(args.truth)
        labels = match_events(events, truth, args.min_iou).labels
        rows = np.arange(len(events))
        source = f"truth store {args.truth}"
    else:
        # analysts' judgement is the label; only scored events can train
        table = {}
        for s in scores:
            table.setdefault(s.event_id, []).append(s.score)
        rows = np.array([i for i, e in enumerate(ids) if e in table], dtype=int)
        labels = np.array([1 if np.mean(table[ids[i]]) >= 0.5 else 0 for i in rows], dtype=int)
        labels_full = np.zeros(len(ids), dtype=int)
        labels_full[rows] = labels
        labels = labels_full
        source = "analyst scores >= 0.5"
    if rows.size == 0:
        raise CliError("no labeled events to train on", EXIT_INVALID)
    names = MACHINE_FEATURES + ("human_score", "human_missing")
    model = mlp_train(
        x[rows], labels[rows], (x.shape[1], args.hidden, 1), args.learning_rate, args.epochs,
        seed=args.seed, feature_names=names, standardize=True,
    )
    try:
        model.save(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    pred = mlp_predict(model, x[rows]) >= 0.5
    acc = float(np.mean(pred == labels[rows].astype(bool)))
    summary = (
        "metric\tvalue\n"
        f"events\t{len(events)}\ntrained_rows\t{rows.size}\npositives\t{int(labels[rows].sum())}\n"
        f"label_source\t{source}\nfinal_loss\t{model.final_loss:.6f}\ntrain_accuracy\t{acc:.6f}\n"
    )
    meta = dict(seed=args.seed, store=args.store, scores=str(spath))
    print(_meta_lines(**meta) + summary, end="")
    _write_table(str(args.out) + ".summary.tsv", summary, **meta)
    return EXIT_OK


def cmd_diel(args) -> int:
    _, events = _load_store(args.store)
    try:
        diel = diel_aggregate(events, args.offset)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    _write_table(args.out, diel.to_tsv(), store=args.store, utc_offset=args.offset)
    print(f"{len(events)} events over {diel.n_days} day(s) -> {args.out}")
    if args.figure:
        from .plotting import plot_diel

        plot_diel(diel, args.figure)
    return EXIT_OK


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adamine", description="Parallel acoustic data mining over sound archives.")
    ap.add_argument("--version", action="version", version=f"adamine {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="inventory an archive directory into a manifest")
    s.add_argument("root")
    s.add_argument("--pattern", default=None, help="filename regex with channel/date/time groups")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("run", help="plan, execute and gather a job")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=None, help="override [job] workers")
    s.add_argument("--tasks", help="write the per-task table here")
    s.add_argument("--diel", help="write an hour-by-day count table here")
    s.add_argument("--offset", type=float, default=0.0, help="local UTC offset in hours for diel output")
    s.add_argument("--figure", help="render a diel heat map (PNG/SVG/PDF by extension)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("bench-store", help="storage backend benchmark")
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_bench_store)

    s = sub.add_parser("bench-scale", help="wall time and speedup across worker counts")
    s.add_argument("config")
    s.add_argument("--workers", type=_workers, default=[1, 2, 4, 8])
    s.add_argument("--repeats", type=int, default=1, help="best-of-N per worker count")
    s.add_argument("--out")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_bench_scale)

    s = sub.add_parser("eval", help="ROC/DET/PR curve of a store against truth events")
    s.add_argument("--store", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--kind", choices=("roc", "det", "pr"), default="roc")
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.add_argument("--figure")
    s.add_argument("--fpr", type=float, default=None)
    s.add_argument("--min-iou", type=float, default=0.25)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-clips", help="one spectrogram image per event for analysts")
    s.add_argument("--store", required=True)
    s.add_argument("--archive", required=True, help="manifest file")
    s.add_argument("--out", required=True)
    s.add_argument("--pad", type=float, default=CLIP_PAD)
    s.add_argument("--window-len", type=int, default=256)
    s.add_argument("--hop", type=int, default=64)
    s.set_defaults(func=cmd_export_clips)

    s = sub.add_parser("import-scores", help="validate analyst scores and attach them to a store")
    s.add_argument("--file", required=True)
    s.add_argument("--store", required=True)
    s.set_defaults(func=cmd_import_scores)

    s = sub.add_parser("post-train", help="train the human-knowledge post-classifier")
    s.add_argument("--store", required=True)
    s.add_argument("--scores", help="score file (default: the store's attached scores)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--truth", help="label events by matching against this truth store")
    s.add_argument("--min-iou", type=float, default=0.25)
    s.add_argument("--aggregate", choices=("first", "mean"), default="first")
    s.add_argument("--hidden", type=int, default=8)
    s.add_argument("--epochs", type=int, default=500)
    s.add_argument("--learning-rate", type=float, default=0.05)
    s.set_defaults(func=cmd_post_train)

    s = sub.add_parser("diel", help="hour-of-day by day event counts")
    s.add_argument("--store", required=True)
    s.add_argument("--offset", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_diel)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "pattern", "unset") is None:
        args.pattern = DEFAULT_PATTERN
    try:
        return args.func(args)
    except CliError as exc:
        print(f"adamine {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ValidationError, ConfigError, PlanError, FormatError) as exc:
        print(f"adamine {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"adamine {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
