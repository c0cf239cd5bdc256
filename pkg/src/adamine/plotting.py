"""Matplotlib figures for CLI reports, rendered off-screen to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evalkit import Curve, DielMatrix  # noqa: E402
from .eventstore import BenchReport  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}

_AXES = {
    "roc": ("false positive rate", "true positive rate"),
    "det": ("false positive rate", "miss rate"),
    "pr": ("recall", "precision"),
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_curves(curves: Mapping[str, Curve], path, marker_fpr: float | None = None) -> Path:
    """ROC, DET or PR curves of one kind on shared axes."""
    kinds = {c.kind for c in curves.values()}
    if len(kinds) != 1:
        raise ValueError("all curves in one figure must share a kind")
    kind = kinds.pop()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, c in curves.items():
            if kind == "pr":
                x, y = [p.tpr for p in c.points], [p.precision for p in c.points]
            elif kind == "det":
                x, y = zip(*c.det_points())
            else:
                x, y = [p.fpr for p in c.points], [p.tpr for p in c.points]
            label = name if c.auc is None else f"{name} (AUC {c.auc:.3f})"
            ax.plot(x, y, drawstyle="default", lw=1.4, label=label)
        if marker_fpr is not None and kind != "pr":
            ax.axvline(marker_fpr, color="0.4", ls="--", lw=0.8)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel(_AXES[kind][0])
        ax.set_ylabel(_AXES[kind][1])
        ax.legend(loc="lower right" if kind == "roc" else "best")
        return _save(fig, path)


def plot_diel(matrix: DielMatrix, path) -> Path:
    """Hour-of-day by day heat map of event counts."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.25 * matrix.n_days + 2), 4.0))
        im = ax.imshow(matrix.counts, aspect="auto", origin="lower", cmap="viridis",
                       extent=(-0.5, matrix.n_days - 0.5, -0.5, 23.5))
        ax.grid(False)
        ax.set_xlabel("day" if matrix.first_day is None else f"day since {matrix.first_day.isoformat()}")
        ax.set_ylabel(f"local hour (UTC{matrix.local_utc_offset:+g})")
        fig.colorbar(im, ax=ax, label="events")
        return _save(fig, path)


def plot_scaling(workers: Sequence[int], wall_s: Sequence[float], path) -> Path:
    """Wall time and speedup against worker count, with the ideal line."""
    speedup = [wall_s[0] / w for w in wall_s]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.0, 3.5))
        a1.plot(workers, wall_s, "o-")
        a1.set_xlabel("workers")
        a1.set_ylabel("wall time (s)")
        a2.plot(workers, speedup, "o-", label="measured")
        a2.plot(workers, [w / workers[0] for w in workers], "k--", lw=0.8, label="ideal")
        a2.set_xlabel("workers")
        a2.set_ylabel("speedup")
        a2.legend()
        return _save(fig, path)


def plot_bench(report: BenchReport, path) -> Path:
    """Load and query time per storage backend (log scale)."""
    names = list(report.timings)
    timings = [report.timings[n] for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = range(len(names))
        ax.bar([x - 0.2 for x in xs], [t.load_s for t in timings], 0.4, label="load")
        ax.bar([x + 0.2 for x in xs], [t.query_s for t in timings], 0.4, label="query")
        ax.set_xticks(list(xs), names)
        ax.set_yscale("log")
        ax.set_ylabel("seconds (median)")
        ax.set_title(f"{report.n_events} events")
        ax.legend()
        return _save(fig, path)
