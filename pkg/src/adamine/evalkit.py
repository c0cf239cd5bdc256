"""Detector evaluation: ROC/DET/PR curves, TPR at a fixed FPR, diel matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Sequence

import numpy as np

from .classify import hk_augment, mlp_predict, mlp_train
from .events import EventRecord, ms_to_datetime


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    fpr: float
    tpr: float
    precision: float


@dataclass(frozen=True)
class Curve:
    kind: str
    points: tuple[CurvePoint, ...]  # ordered by decreasing threshold
    auc: float | None = None

    def det_points(self) -> list[tuple[float, float]]:
        """(false positive rate, miss rate) pairs."""
        return [(p.fpr, 1.0 - p.tpr) for p in self.points]

    def to_tsv(self) -> str:
        rows = ["threshold\tfpr\ttpr\tfnr\tprecision"]
        for p in self.points:
            rows.append(f"{p.threshold:.6g}\t{p.fpr:.6f}\t{p.tpr:.6f}\t{1 - p.tpr:.6f}\t{p.precision:.6f}")
        return "\n".join(rows) + "\n"


def curve(scores: Sequence[float], labels: Sequence[int], kind: str = "roc") -> Curve:
    """Exact operating points at every distinct score.

    An event is called positive when its score is >= the threshold. ROC and
    DET curves start at the (0, 0) point of an infinite threshold. The AUC
    (ROC only) is the trapezoid area under exactly these points.
    """
    if kind not in ("roc", "det", "pr"):
        raise ValueError(f"unknown curve kind {kind!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if s.size < 2:
        raise ValueError("need at least two scored items")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if kind in ("roc", "det") and (n_pos == 0 or n_neg == 0):
        raise ValueError(f"{kind} needs both positive and negative labels")
    if kind == "pr" and n_pos == 0:
        raise ValueError("pr needs at least one positive label")

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # the last index of each run of equal scores is where a threshold lands
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    points = []
    if kind != "pr":
        points.append(CurvePoint(math.inf, 0.0, 0.0, 1.0))
    for i in last:
        t, f = int(tp[i]), int(fp[i])
        points.append(
            CurvePoint(
                float(s_sorted[i]),
                f / n_neg if n_neg else 0.0,
                t / n_pos,
                t / (t + f),
            )
        )
    auc = None
    if kind == "roc":
        x = np.array([p.fpr for p in points])
        h = np.array([p.tpr for p in points])
        auc = float(np.sum((x[1:] - x[:-1]) * (h[1:] + h[:-1]) / 2.0))
    return Curve(kind, tuple(points), auc)


def tpr_at_fpr(c: Curve, target_fpr: float) -> float:
    """Linearly interpolated TPR at ``target_fpr``.

    Where the curve rises vertically at exactly ``target_fpr`` the highest
    TPR reached at that FPR is returned.
    """
    pts = c.points
    if not pts:
        raise ValueError("empty curve")
    lo = None
    for p in pts:
        if p.fpr <= target_fpr:
            lo = p
        else:
            break
    if lo is None:
        return 0.0
    hi = next((p for p in pts if p.fpr > target_fpr), None)
    if hi is None or lo.fpr == target_fpr:
        return lo.tpr
    w = (target_fpr - lo.fpr) / (hi.fpr - lo.fpr)
    return lo.tpr + w * (hi.tpr - lo.tpr)


# --- machine-only vs human-knowledge post-classifier ---------------------------


@dataclass(frozen=True)
class HkComparison:
    curves: dict[str, Curve]
    tpr: dict[str, float]
    target_fpr: float

    @property
    def delta_tpr(self) -> float:
        return self.tpr["HK-ANN"] - self.tpr["ANN"]

    def to_tsv(self) -> str:
        rows = ["classifier\tauc\ttpr_at_fpr"]
        for name, c in self.curves.items():
            rows.append(f"{name}\t{c.auc:.6f}\t{self.tpr[name]:.6f}")
        return "\n".join(rows) + "\n"


def compare_hk(
    features,
    labels,
    event_ids: Sequence[str],
    scores,
    train_mask,
    target_fpr: float = 0.06,
    hidden: int = 8,
    epochs: int = 200,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> HkComparison:
    """Train an ANN on machine features and an HK-ANN on features plus analyst
    scores, then compare ROC curves on the held-out rows."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    train = np.asarray(train_mask, dtype=bool)
    test = ~train
    xa = hk_augment(x, event_ids, scores)
    curves, tpr = {}, {}
    for name, data in (("ANN", x), ("HK-ANN", xa)):
        model = mlp_train(data[train], y[train], (data.shape[1], hidden, 1), learning_rate, epochs,
                          seed=seed, standardize=True)
        c = curve(mlp_predict(model, data[test]), y[test], "roc")
        curves[name] = c
        tpr[name] = tpr_at_fpr(c, target_fpr)
    return HkComparison(curves, tpr, target_fpr)


# --- diel -------------------------------------------------------------------


@dataclass(frozen=True)
class DielMatrix:
    counts: np.ndarray  # (24, n_days)
    local_utc_offset: float
    first_day: date | None

    @property
    def n_days(self) -> int:
        return self.counts.shape[1]

    def to_tsv(self) -> str:
        days = [
            (self.first_day + timedelta(days=d)).isoformat() if self.first_day else str(d)
            for d in range(self.n_days)
        ]
        rows = ["hour\t" + "\t".join(days)]
        for h in range(24):
            rows.append(f"{h}\t" + "\t".join(str(int(v)) for v in self.counts[h]))
        return "\n".join(rows) + "\n"


def diel_aggregate(
    events: Sequence[EventRecord],
    local_utc_offset: float = 0.0,
    first_day: date | None = None,
    n_days: int | None = None,
) -> DielMatrix:
    """Count events per (local hour, local day) of their begin time.

    The day axis starts at ``first_day`` (default: earliest event) and spans
    ``n_days`` (default: through the last event). Events outside a declared
    span are an error rather than silently dropped.
    """
    if not -12 <= local_utc_offset <= 14:
        raise ValueError("offset must lie in [-12, +14] hours")
    shift = timedelta(hours=local_utc_offset)
    local = [ms_to_datetime(e.begin_time) + shift for e in events]
    if first_day is None and local:
        first_day = min(t.date() for t in local)
    if n_days is None:
        n_days = (max(t.date() for t in local) - first_day).days + 1 if local else 0
    counts = np.zeros((24, n_days), dtype=np.int64)
    for t in local:
        d = (t.date() - first_day).days
        if not 0 <= d < n_days:
            raise ValueError(f"event on {t.date()} outside the declared {n_days}-day span")
        counts[t.hour, d] += 1
    return DielMatrix(counts, local_utc_offset, first_day)


# --- matching detections against truth ---------------------------------------


def bbox_iou(a: EventRecord, b: EventRecord) -> float:
    """Intersection over union of time-frequency boxes."""
    dt = min(a.end_time, b.end_time) - max(a.begin_time, b.begin_time)
    df = min(a.f_hi, b.f_hi) - max(a.f_lo, b.f_lo)
    if dt <= 0 or df <= 0:
        return 0.0
    inter = dt * df
    area_a = (a.end_time - a.begin_time) * (a.f_hi - a.f_lo)
    area_b = (b.end_time - b.begin_time) * (b.f_hi - b.f_lo)
    return inter / (area_a + area_b - inter)


@dataclass(frozen=True)
class MatchResult:
    labels: np.ndarray  # 1 for detections matched to a truth event
    matched_truth: int
    n_truth: int
    false_positives: int
    pairs: tuple[tuple[int, int, float], ...]  # (detection index, truth index, iou)


def match_events(
    detected: Sequence[EventRecord], truth: Sequence[EventRecord], min_iou: float = 0.25
) -> MatchResult:
    """Greedy one-to-one matching by descending IoU within each channel."""
    cand = []
    for i, d in enumerate(detected):
        for j, t in enumerate(truth):
            if t.channel_id and d.channel_id and t.channel_id != d.channel_id:
                continue
            iou = bbox_iou(d, t)
            if iou >= min_iou:
                cand.append((-iou, i, j))
    cand.sort()
    used_d, used_t = set(), set()
    pairs = []
    for neg, i, j in cand:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        pairs.append((i, j, -neg))
    labels = np.zeros(len(detected), dtype=int)
    for i, _, _ in pairs:
        labels[i] = 1
    return MatchResult(labels, len(used_t), len(truth), len(detected) - len(used_d), tuple(sorted(pairs)))


# --- minimal SVG --------------------------------------------------------------


def curve_svg(curves: dict[str, Curve], width: int = 420, height: int = 420) -> str:
    """A dependency-free SVG line chart of one or more curves."""
    pad = 40
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="black"/>',
    ]

    def xy(x: float, y: float) -> str:
        return f"{pad + x * (width - 2 * pad):.2f},{height - pad - y * (height - 2 * pad):.2f}"

    for k, (name, c) in enumerate(curves.items()):
        if c.kind == "pr":
            pts = [(p.tpr, p.precision) for p in c.points]
        elif c.kind == "det":
            pts = c.det_points()
        else:
            pts = [(p.fpr, p.tpr) for p in c.points]
        color = colors[k % len(colors)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{" ".join(xy(x, y) for x, y in pts)}"/>'
        )
        label = name if c.auc is None else f"{name} (AUC {c.auc:.3f})"
        parts.append(
            f'<text x="{pad + 8}" y="{pad + 16 + 14 * k}" font-size="11" fill="{color}">{label}</text>'
        )
    first = next(iter(curves.values()), None)
    xlabel, ylabel = {
        "roc": ("false positive rate", "true positive rate"),
        "det": ("false positive rate", "miss rate"),
        "pr": ("recall", "precision"),
    }[first.kind if first else "roc"]
    parts.append(f'<text x="{width / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{xlabel}</text>')
    parts.append(
        f'<text x="12" y="{height / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {height / 2})">{ylabel}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
