"""Image-style recognizers: data-template correlation and HOG features."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import maximum_filter

from .dsp import Spectrogram, read_pgm, write_pgm
from .errors import FormatError
from .events import EventRecord, make_event

HOG_EPS = 1e-12


@dataclass(frozen=True)
class Template:
    name: str
    patch: np.ndarray  # (frames, bins)
    f_lo: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.patch, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("template patch must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("template patch has non-finite values")

    def save(self, directory) -> Path:
        directory = Path(directory)
        write_pgm(directory / f"{self.name}.pgm", self.patch)
        frames, bins = self.patch.shape
        (directory / f"{self.name}.meta").write_text(f"{self.f_lo!r}\t{frames}\t{bins}\n")
        return directory / f"{self.name}.pgm"

    @classmethod
    def load(cls, path) -> "Template":
        """Load from ``<name>.pgm`` (or the bare stem) plus its ``.meta`` sidecar."""
        path = Path(path)
        stem = path.with_suffix("") if path.suffix in (".pgm", ".meta") else path
        patch = read_pgm(stem.with_suffix(".pgm"))
        fields = stem.with_suffix(".meta").read_text().split()
        if len(fields) != 3:
            raise FormatError(f"{stem}.meta: expected 'f_lo frames bins'")
        f_lo, frames, bins = float(fields[0]), int(fields[1]), int(fields[2])
        if patch.shape != (frames, bins):
            raise FormatError(f"{stem}: meta shape {(frames, bins)} != image {patch.shape}")
        return cls(stem.name, patch, f_lo)


def ncc_map(image: np.ndarray, patch: np.ndarray, chunk_elems: int = 4_000_000) -> np.ndarray:
    """Zero-mean normalized cross-correlation at every valid offset.

    Output has shape ``(F - f + 1, B - b + 1)``. Windows with no variance
    correlate to 0.
    """
    img = np.asarray(image, dtype=np.float64)
    tpl = np.asarray(patch, dtype=np.float64)
    f, b = tpl.shape
    if f > img.shape[0] or b > img.shape[1]:
        raise ValueError(f"template {tpl.shape} larger than spectrogram {img.shape}")
    t0 = tpl - tpl.mean()
    t_norm = np.sqrt((t0**2).sum())
    out_shape = (img.shape[0] - f + 1, img.shape[1] - b + 1)
    out = np.zeros(out_shape)
    if t_norm == 0:
        return out
    windows = sliding_window_view(img, (f, b))
    rows = max(1, chunk_elems // max(1, out_shape[1] * f * b))
    scale = np.abs(img).max() if img.size else 0.0
    for r0 in range(0, out_shape[0], rows):
        w = windows[r0 : r0 + rows]
        wc = w - w.mean(axis=(2, 3), keepdims=True)
        num = np.einsum("ijkl,kl->ij", wc, t0)
        den = np.sqrt(np.einsum("ijkl,ijkl->ij", wc, wc)) * t_norm
        flat = den <= 1e-12 * max(scale, 1e-300) * t_norm * np.sqrt(f * b)
        out[r0 : r0 + rows] = np.where(flat, 0.0, num / np.where(flat, 1.0, den))
    return out


def _peaks(corr: np.ndarray, threshold: float, footprint: tuple[int, int]) -> list[tuple[int, int]]:
    """Local maxima above threshold with greedy suppression inside the template footprint."""
    local = corr == maximum_filter(corr, size=footprint, mode="nearest")
    cand = np.argwhere(local & (corr > threshold))
    order = sorted(map(tuple, cand.tolist()), key=lambda ij: (-corr[ij], ij))
    kept: list[tuple[int, int]] = []
    for i, j in order:
        if all(abs(i - a) >= footprint[0] or abs(j - c) >= footprint[1] for a, c in kept):
            kept.append((i, j))
    return sorted(kept)


def template_correlate(
    spec: Spectrogram,
    template: Template,
    threshold: float = 0.6,
    band_slack: float | None = None,
    *,
    channel_id: str = "",
    detector_id: str = "",
    tag: str = "",
) -> list[EventRecord]:
    """Events at correlation peaks above ``threshold``.

    With ``band_slack`` set, only offsets whose lowest bin lies within that
    many Hz of the template's band anchor are considered.
    """
    if not -1 <= threshold <= 1:
        raise ValueError("threshold must lie in [-1, 1]")
    corr = ncc_map(spec.magnitudes, template.patch)
    if band_slack is not None:
        f_off = np.arange(corr.shape[1]) * spec.bin_width
        corr = np.where(np.abs(f_off - template.f_lo)[None, :] <= band_slack, corr, -1.0)
    nf, nb = template.patch.shape
    events = []
    for i, j in _peaks(corr, threshold, (nf, nb)):
        events.append(
            make_event(
                spec.t0 + (i - 0.5) * spec.frame_hop,
                spec.t0 + (i + nf - 0.5) * spec.frame_hop,
                (j - 0.5) * spec.bin_width,
                (j + nb - 0.5) * spec.bin_width,
                float(corr[i, j]),
                channel_id=channel_id,
                detector_id=detector_id,
                tag=tag,
            )
        )
    return events


@dataclass(frozen=True)
class HogDescriptor:
    cell_size: int
    n_bins: int
    vector: np.ndarray
    cells_shape: tuple[int, int] = (0, 0)


def hog_histograms(patch: np.ndarray, cell_size: int, n_bins: int) -> np.ndarray:
    """Un-normalized per-cell orientation histograms, shape ``(cy, cx, n_bins)``.

    Gradients are central differences on interior pixels (border pixels vote
    nothing). Orientation is unsigned over [0, 180) with bin centres at
    ``k * 180 / n_bins`` and linear vote splitting between neighbours.
    """
    img = np.asarray(patch, dtype=np.float64)
    h, w = img.shape
    if h % cell_size or w % cell_size:
        raise ValueError(f"patch {img.shape} not divisible by cell size {cell_size}")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[1:-1, 1:-1] = img[1:-1, 2:] - img[1:-1, :-2]
    gy[1:-1, 1:-1] = img[2:, 1:-1] - img[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    width = 180.0 / n_bins
    pos = ang / width
    lo = np.floor(pos).astype(int) % n_bins
    frac = pos - np.floor(pos)
    hi = (lo + 1) % n_bins
    cy, cx = h // cell_size, w // cell_size
    cell = (np.arange(h) // cell_size)[:, None] * cx + (np.arange(w) // cell_size)[None, :]
    hist = np.zeros(cy * cx * n_bins)
    np.add.at(hist, (cell * n_bins + lo).ravel(), (mag * (1 - frac)).ravel())
    np.add.at(hist, (cell * n_bins + hi).ravel(), (mag * frac).ravel())
    return hist.reshape(cy, cx, n_bins)


def hog_features(patch: np.ndarray, cell_size: int = 8, n_bins: int = 9) -> HogDescriptor:
    hist = hog_histograms(patch, cell_size, n_bins)
    v = hist.ravel()
    v = v / np.sqrt((v**2).sum() + HOG_EPS**2)
    return HogDescriptor(cell_size, n_bins, v, hist.shape[:2])
