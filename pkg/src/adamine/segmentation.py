"""Connected-region analysis of binary spectrogram masks and the type-I detector.

Labeling is two-pass: the mask is reduced to horizontal runs of true pixels
(one row per frame), runs that touch between consecutive frames are joined in
a union-find forest, and each root becomes one region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import BinaryMask, Spectrogram, binarize
from .errors import ConsistencyError
from .events import EventRecord, make_event


@dataclass(frozen=True, eq=False)
class Region:
    frames: np.ndarray  # pixel rows, lexicographically sorted with ``bins``
    bins: np.ndarray
    frame_hop: float = 1.0
    bin_width: float = 1.0
    t0: float = 0.0

    @property
    def n_pixels(self) -> int:
        return int(self.frames.size)

    @property
    def frame_lo(self) -> int:
        return int(self.frames.min())

    @property
    def frame_hi(self) -> int:
        return int(self.frames.max())

    @property
    def bin_lo(self) -> int:
        return int(self.bins.min())

    @property
    def bin_hi(self) -> int:
        return int(self.bins.max())

    @property
    def t_start(self) -> float:
        return self.t0 + (self.frame_lo - 0.5) * self.frame_hop

    @property
    def t_end(self) -> float:
        return self.t0 + (self.frame_hi + 0.5) * self.frame_hop

    @property
    def f_lo(self) -> float:
        return (self.bin_lo - 0.5) * self.bin_width

    @property
    def f_hi(self) -> float:
        return (self.bin_hi + 0.5) * self.bin_width

    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.frames.tolist(), self.bins.tolist()))


@dataclass(frozen=True)
class RegionFeatures:
    duration: float
    bandwidth: float
    peak_freq: float
    total_energy: float
    time_centroid: float
    freq_centroid: float
    slope: float


def _runs(mask: np.ndarray):
    padded = np.zeros((mask.shape[0], mask.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    d = np.diff(padded, axis=1)
    rows, starts = np.nonzero(d == 1)
    _, ends = np.nonzero(d == -1)
    return rows, starts, ends


def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def connected_regions(mask: BinaryMask | np.ndarray, connectivity: int = 8) -> list[Region]:
    """Label connected true pixels; regions sorted by (t_start, f_lo, first pixel)."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    if isinstance(mask, BinaryMask):
        m, hop, bw, t0 = mask.mask, mask.frame_hop, mask.bin_width, mask.t0
    else:
        m, hop, bw, t0 = np.asarray(mask), 1.0, 1.0, 0.0
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    rows, starts, ends = _runs(m)
    n = rows.size
    if n == 0:
        return []
    rows_l, starts_l, ends_l = rows.tolist(), starts.tolist(), ends.tolist()
    slack = 1 if connectivity == 8 else 0
    parent = list(range(n))
    row_first = np.searchsorted(rows, np.arange(m.shape[0] + 1)).tolist()

    # first pass: join runs of frame r with overlapping runs of frame r + 1
    for r in range(m.shape[0] - 1):
        a, a_end = row_first[r], row_first[r + 1]
        b, b_end = row_first[r + 1], row_first[r + 2]
        while a < a_end and b < b_end:
            if starts_l[a] < ends_l[b] + slack and starts_l[b] < ends_l[a] + slack:
                ra, rb = _find(parent, a), _find(parent, b)
                if ra != rb:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
            if ends_l[a] < ends_l[b]:
                a += 1
            else:
                b += 1

    # second pass: gather runs per root
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(_find(parent, i), []).append(i)

    regions = []
    for members in groups.values():
        fr = np.concatenate([np.full(ends_l[i] - starts_l[i], rows_l[i]) for i in members])
        bn = np.concatenate([np.arange(starts_l[i], ends_l[i]) for i in members])
        regions.append(Region(fr.astype(np.int64), bn.astype(np.int64), hop, bw, t0))
    regions.sort(key=lambda g: (g.frame_lo, g.bin_lo, int(g.frames[0]), int(g.bins[0])))
    return regions


def region_features(region: Region, spec: Spectrogram) -> RegionFeatures:
    fr, bn = region.frames, region.bins
    if fr.size == 0:
        raise ConsistencyError("empty region")
    if fr.min() < 0 or bn.min() < 0 or fr.max() >= spec.n_frames or bn.max() >= spec.n_bins:
        raise ConsistencyError("region pixels fall outside the spectrogram")
    mag = spec.magnitudes[fr, bn]
    power = mag**2
    t = spec.t0 + fr * spec.frame_hop
    f = bn * spec.bin_width
    total = float(power.sum())
    if total > 0:
        tc = float((power * t).sum() / total)
        fc = float((power * f).sum() / total)
    else:
        tc, fc = float(t.mean()), float(f.mean())

    # per-frame magnitude-weighted frequency centroid, then a least-squares line
    uniq, inv = np.unique(fr, return_inverse=True)
    if uniq.size < 2:
        slope = 0.0
    else:
        w_sum = np.bincount(inv, weights=mag)
        wb_sum = np.bincount(inv, weights=mag * bn)
        plain = np.bincount(inv, weights=bn) / np.bincount(inv)
        cent_bins = np.where(w_sum > 0, wb_sum / np.where(w_sum > 0, w_sum, 1.0), plain)
        # snap away last-ulp noise so a flat track has exactly zero slope
        cent = np.round(cent_bins, 9) * spec.bin_width
        tt = uniq * spec.frame_hop
        tt = tt - tt.mean()
        slope = float((tt * (cent - cent.mean())).sum() / (tt**2).sum())

    return RegionFeatures(
        duration=(region.frame_hi - region.frame_lo + 1) * spec.frame_hop,
        bandwidth=(region.bin_hi - region.bin_lo + 1) * spec.bin_width,
        peak_freq=float(bn[int(np.argmax(mag))] * spec.bin_width),
        total_energy=total,
        time_centroid=tc,
        freq_centroid=fc,
        slope=slope,
    )


Window = tuple[float, float]


@dataclass(frozen=True)
class Type1Rules:
    """Acceptance windows for region features; ``None`` leaves a feature unconstrained."""

    duration: Window | None = None
    bandwidth: Window | None = None
    slope: Window | None = None
    energy: Window | None = None

    def __post_init__(self):
        for name in ("duration", "bandwidth", "slope", "energy"):
            w = getattr(self, name)
            if w is not None and not w[0] <= w[1]:
                raise ValueError(f"rule window {name} is not ordered: {w}")

    def windows(self) -> list[tuple[str, Window]]:
        return [
            (name, getattr(self, name))
            for name in ("duration", "bandwidth", "slope", "energy")
            if getattr(self, name) is not None
        ]


def rule_margin(x: float, window: Window) -> float:
    """1 at the window centre falling linearly to 0 at either edge, 0 outside."""
    lo, hi = window
    if x < lo or x > hi:
        return 0.0
    half = 0.5 * (hi - lo)
    if half == 0:
        return 1.0
    return max(0.0, 1.0 - abs(x - 0.5 * (lo + hi)) / half)


def _value(feat: RegionFeatures, name: str) -> float:
    return feat.total_energy if name == "energy" else getattr(feat, name)


def passes(feat: RegionFeatures, rules: Type1Rules) -> bool:
    return all(lo <= _value(feat, n) <= hi for n, (lo, hi) in rules.windows())


def rule_score(feat: RegionFeatures, rules: Type1Rules) -> float:
    margins = [rule_margin(_value(feat, n), w) for n, w in rules.windows()]
    return min(margins) if margins else 1.0


def type1_detect(
    spec: Spectrogram,
    rules: Type1Rules,
    binarize_p: float = 98.0,
    connectivity: int = 8,
    band: tuple[float, float] | None = None,
    *,
    channel_id: str = "",
    detector_id: str = "",
    tag: str = "",
) -> list[EventRecord]:
    """Short tonal sounds: binarize, label regions, keep those passing every rule."""
    if spec.n_frames == 0 or not np.any(spec.magnitudes):
        return []
    mask = binarize(spec, binarize_p)
    if band is not None:
        keep = np.zeros(spec.n_bins, dtype=bool)
        keep[spec.band_bins(*band)] = True
        mask = BinaryMask(mask.mask & keep[None, :], mask.provenance, mask.frame_hop, mask.bin_width, mask.t0)
    events = []
    for region in connected_regions(mask, connectivity):
        feat = region_features(region, spec)
        if not passes(feat, rules):
            continue
        events.append(
            make_event(
                region.t_start,
                region.t_end,
                region.f_lo,
                region.f_hi,
                rule_score(feat, rules),
                channel_id=channel_id,
                detector_id=detector_id,
                tag=tag,
            )
        )
    return events
