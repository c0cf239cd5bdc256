"""Spectrogram front end: STFT magnitudes, per-bin percentile masks, energy projections."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .archive import SampleBlock
from .errors import EmptySpectrogram, FormatError

WINDOW_KINDS = ("rectangular", "hann")


@dataclass(frozen=True)
class Spectrogram:
    """Linear magnitudes, shape ``(frames, bins)``.

    ``t0`` is the time of the first frame's window centre. It is POSIX seconds
    when built from an archive block, but any origin works.
    """

    magnitudes: np.ndarray
    frame_hop: float
    bin_width: float
    t0: float
    window_len: int
    window_kind: str
    sample_rate: float = 0.0

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[1]

    def frame_times(self) -> np.ndarray:
        return self.t0 + self.frame_hop * np.arange(self.n_frames)

    def bin_freqs(self) -> np.ndarray:
        return self.bin_width * np.arange(self.n_bins)

    def band_bins(self, f_lo: float, f_hi: float) -> np.ndarray:
        """Indices of bins whose centre frequency lies in ``[f_lo, f_hi]``."""
        f = self.bin_freqs()
        return np.flatnonzero((f >= f_lo) & (f <= f_hi))

    def crop_frames(self, i0: int, i1: int) -> "Spectrogram":
        return Spectrogram(
            self.magnitudes[i0:i1],
            self.frame_hop,
            self.bin_width,
            self.t0 + i0 * self.frame_hop,
            self.window_len,
            self.window_kind,
            self.sample_rate,
        )


@dataclass(frozen=True)
class BinaryMask:
    mask: np.ndarray
    provenance: dict = field(default_factory=dict)
    frame_hop: float = 1.0
    bin_width: float = 1.0
    t0: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def window(kind: str, n: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(n)
    if kind == "hann":
        # periodic Hann, the usual choice for overlapped analysis
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    raise ValueError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")


def stft(
    block: SampleBlock | np.ndarray,
    window_len: int = 256,
    hop: int = 128,
    window_kind: str = "hann",
    sample_rate: float | None = None,
    t_start: float | None = None,
) -> Spectrogram:
    """Magnitude STFT of a sample block (or a bare array with ``sample_rate``)."""
    if isinstance(block, SampleBlock):
        x = np.asarray(block.samples, dtype=np.float64)
        rate = float(block.sample_rate)
        start = block.start_posix if t_start is None else t_start
    else:
        if sample_rate is None:
            raise ValueError("sample_rate is required for a bare array")
        x = np.asarray(block, dtype=np.float64)
        rate = float(sample_rate)
        start = 0.0 if t_start is None else t_start
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if len(x) < window_len:
        raise EmptySpectrogram(f"{len(x)} samples is shorter than one {window_len}-sample window")
    frames = sliding_window_view(x, window_len)[::hop]
    mags = np.abs(np.fft.rfft(frames * window(window_kind, window_len), axis=1))
    return Spectrogram(
        magnitudes=mags,
        frame_hop=hop / rate,
        bin_width=rate / window_len,
        t0=start + 0.5 * window_len / rate,
        window_len=window_len,
        window_kind=window_kind,
        sample_rate=rate,
    )


def binarize(spec: Spectrogram, p: float) -> BinaryMask:
    """True where a pixel strictly exceeds the p-th percentile of its own bin."""
    if not 0 < p < 100:
        raise ValueError("percentile must be in (0, 100)")
    m = spec.magnitudes
    if m.ndim != 2:
        raise ValueError("spectrogram must be 2-D")
    thresh = np.percentile(m, p, axis=0, method="linear")
    return BinaryMask(
        m > thresh[None, :],
        {"method": "per-bin percentile", "parameter": p},
        spec.frame_hop,
        spec.bin_width,
        spec.t0,
    )


def energy_projection(
    spec: Spectrogram, axis: str = "time", band: tuple[float, float] | None = None
) -> np.ndarray:
    """Sum of squared magnitudes over the orthogonal axis, restricted to ``band``.

    ``axis="time"`` gives one value per frame; ``axis="frequency"`` one value
    per bin inside the band.
    """
    nyquist = spec.bin_width * (spec.n_bins - 1)
    f_lo, f_hi = (0.0, nyquist) if band is None else band
    if not f_lo < f_hi:
        raise ValueError("band requires f_lo < f_hi")
    if f_lo < 0 or f_lo > nyquist:
        raise ValueError(f"band {f_lo}-{f_hi} Hz outside 0-{nyquist} Hz")
    bins = spec.band_bins(f_lo, f_hi)
    if bins.size == 0:
        raise ValueError(f"band {f_lo}-{f_hi} Hz contains no bins")
    power = spec.magnitudes[:, bins] ** 2
    if axis == "time":
        return power.sum(axis=1)
    if axis == "frequency":
        return power.sum(axis=0)
    raise ValueError(f"axis must be 'time' or 'frequency', not {axis!r}")


def to_db(m: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(m, floor))


# --- 8-bit PGM (P5) clips -------------------------------------------------


def to_gray(magnitudes: np.ndarray) -> np.ndarray:
    """Min-max scale a (frames, bins) matrix into a PGM image.

    Rows are frequency bins with the highest bin first; columns are frames.
    """
    img = np.asarray(magnitudes, dtype=np.float64).T[::-1]
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.round((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, magnitudes: np.ndarray) -> None:
    img = to_gray(magnitudes)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` up to the 8-bit scaling; returns (frames, bins)."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    img = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if img.size != w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    return img.reshape(h, w)[::-1].T.astype(np.float64)
