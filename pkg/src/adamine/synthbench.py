"""Seeded synthetic audio scenes and labeled event sets.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64). Noise
is drawn first, then each signal in declaration order, so a scene is
reproducible bit for bit from its spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .archive import SampleBlock, archive_filename, write_wav
from .classify import HumanScore
from .events import EventRecord, make_event

SIGNAL_KINDS = ("upsweep", "pulse_train", "tone")
DEFAULT_START = datetime(2006, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Signal:
    """One planted sound.

    ``upsweep``: ``f0``, ``f1``, ``duration``. ``tone``: ``freq``,
    ``duration``. ``pulse_train``: ``freq``, ``pulse_len``, ``period``,
    ``count``, optional ``jitter`` (std of pulse-time jitter as a fraction of
    the period).
    """

    kind: str
    start: float
    snr_db: float
    params: dict = field(default_factory=dict)

    def pulse_times(self, rng: np.random.Generator | None = None) -> np.ndarray:
        p = self.params
        base = self.start + p["period"] * np.arange(int(p["count"]))
        jitter = float(p.get("jitter", 0.0))
        if jitter and rng is not None:
            base = base + rng.normal(0.0, jitter * p["period"], size=base.size)
        return base

    def band(self) -> tuple[float, float]:
        p = self.params
        if self.kind == "upsweep":
            return (min(p["f0"], p["f1"]), max(p["f0"], p["f1"]))
        half = p.get("half_band")
        if self.kind == "tone":
            half = half if half is not None else max(2.0 / p["duration"], 1.0)
            return (p["freq"] - half, p["freq"] + half)
        half = half if half is not None else 1.0 / p["pulse_len"]
        return (p["freq"] - half, p["freq"] + half)


@dataclass(frozen=True)
class SceneSpec:
    duration: float
    rate: int
    noise_rms: float = 0.01
    signals: tuple[Signal, ...] = ()
    seed: int = 0
    noise_kind: str = "white"
    channel_id: str = "S"
    start_utc: datetime = DEFAULT_START

    def __post_init__(self):
        if self.duration <= 0 or self.rate <= 0:
            raise ValueError("duration and rate must be positive")
        if self.noise_kind not in ("white", "pink"):
            raise ValueError("noise_kind must be 'white' or 'pink'")
        for s in self.signals:
            if s.kind not in SIGNAL_KINDS:
                raise ValueError(f"unknown signal kind {s.kind!r}")
            if not np.isfinite(s.snr_db):
                raise ValueError("SNR must be finite")
            end = s.start + _extent(s)
            if s.start < 0 or end > self.duration + 1e-9:
                raise ValueError(f"{s.kind} at {s.start} s does not fit in {self.duration} s")


def _extent(s: Signal) -> float:
    p = s.params
    if s.kind == "pulse_train":
        jitter = float(p.get("jitter", 0.0))
        return p["period"] * (int(p["count"]) - 1) + p["pulse_len"] + 4 * jitter * p["period"]
    return p["duration"]


def _noise(rng: np.random.Generator, n: int, kind: str) -> np.ndarray:
    white = rng.standard_normal(n)
    if kind == "white":
        return white
    spec = np.fft.rfft(white)
    f = np.arange(spec.size)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0.0
    pink = np.fft.irfft(spec, n)
    return pink / pink.std()


def _waveform(s: Signal, rate: int, rng: np.random.Generator):
    """Unit-scale waveform, its first sample index, and the sample mask where it is active."""
    p = s.params
    if s.kind == "upsweep":
        n = int(round(p["duration"] * rate))
        t = np.arange(n) / rate
        k = (p["f1"] - p["f0"]) / p["duration"]
        w = np.sin(2 * np.pi * (p["f0"] * t + 0.5 * k * t**2)) * np.hanning(n)
        return w, int(round(s.start * rate)), np.ones(n, bool)
    if s.kind == "tone":
        n = int(round(p["duration"] * rate))
        t = np.arange(n) / rate
        return np.sin(2 * np.pi * p["freq"] * t) * np.hanning(n), int(round(s.start * rate)), np.ones(n, bool)
    times = s.pulse_times(rng)
    m = int(round(p["pulse_len"] * rate))
    first = int(round(times.min() * rate))
    last = int(round(times.max() * rate)) + m
    w = np.zeros(last - first)
    active = np.zeros(last - first, bool)
    tt = np.arange(m) / rate
    burst = np.sin(2 * np.pi * p["freq"] * tt) * np.hanning(m)
    for t in times:
        i = int(round(t * rate)) - first
        w[i : i + m] += burst
        active[i : i + m] = True
    return w, first, active


def band_power(x: np.ndarray, rate: float, band: tuple[float, float]) -> float:
    """Mean power of ``x`` restricted to ``band`` (Parseval over an rfft)."""
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1.0 / rate)
    sel = (f >= band[0]) & (f <= band[1])
    weights = np.where((f == 0) | (f == rate / 2), 1.0, 2.0)
    return float(np.sum(weights[sel] * np.abs(spec[sel]) ** 2) / x.size**2)


@dataclass
class RenderedScene:
    block: SampleBlock
    truth: list[EventRecord]
    signal_only: np.ndarray
    noise_only: np.ndarray


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Mix the planted signals into noise at their requested in-band SNR.

    SNR is signal power over its active samples divided by the power of the
    realized noise inside the signal's truth band.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.rate))
    noise = spec.noise_rms * _noise(rng, n, spec.noise_kind)
    sig = np.zeros(n)
    truth = []
    t_base = spec.start_utc.timestamp()
    for k, s in enumerate(spec.signals):
        w, first, active = _waveform(s, spec.rate, rng)
        band = s.band()
        seg = noise[first : first + w.size]
        p_noise = band_power(seg, spec.rate, band) if seg.size else 0.0
        p_sig = float(np.mean(w[active] ** 2))
        if p_noise > 0 and p_sig > 0:
            w = w * np.sqrt(10 ** (s.snr_db / 10.0) * p_noise / p_sig)
        elif p_sig > 0:
            w = w * 0.5 / np.abs(w).max()
        sig[first : first + w.size] += w[: max(0, n - first)]
        act = np.flatnonzero(active)
        truth.append(
            make_event(
                t_base + (first + act[0]) / spec.rate,
                t_base + (first + act[-1] + 1) / spec.rate,
                band[0],
                band[1],
                1.0,
                channel_id=spec.channel_id,
                detector_id="truth",
                tag=s.kind,
                event_id=f"truth:{k}",
                run_id="truth",
            )
        )
    samples = sig + noise
    peak = np.abs(samples).max() if n else 0.0
    if peak > 1.0:
        raise ValueError(f"rendered scene clips (peak {peak:.3f}); lower noise or SNR")
    block = SampleBlock(spec.channel_id, spec.start_utc, spec.rate, samples)
    return RenderedScene(block, truth, sig, noise)


def write_scene_archive(
    scene: RenderedScene, root, file_len: float = 600.0, bit_depth: int = 16
) -> list[Path]:
    """Split a rendered block into ``<channel>_<date>_<time>.wav`` files under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    b = scene.block
    step = int(round(file_len * b.sample_rate))
    if step != file_len * b.sample_rate or file_len != int(file_len):
        raise ValueError("file_len must be whole seconds")
    paths = []
    for i in range(0, len(b.samples), step):
        start = b.start_utc + timedelta(seconds=i / b.sample_rate)
        path = root / archive_filename(b.channel_id, start)
        write_wav(path, b.samples[i : i + step], b.sample_rate, bit_depth)
        paths.append(path)
    return paths


# --- analyst scores -----------------------------------------------------------

_CUTS = np.array([-1.5, -0.5, 0.5, 1.5])


def _level_probs(a: float) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities of the five score levels given label 1 and label 0."""
    edges = np.concatenate([[-np.inf], _CUTS, [np.inf]])

    def probs(mu):
        return np.diff(norm.cdf(edges - mu))

    return probs(a), probs(-a)


def expected_correlation(a: float, p_pos: float) -> float:
    levels = np.linspace(0.0, 1.0, 5)
    p1, p0 = _level_probs(a)
    m1, m0 = levels @ p1, levels @ p0
    mean = p_pos * m1 + (1 - p_pos) * m0
    var = p_pos * (levels**2 @ p1) + (1 - p_pos) * (levels**2 @ p0) - mean**2
    if var <= 0:
        return 0.0
    return float((m1 - m0) * np.sqrt(p_pos * (1 - p_pos)) / np.sqrt(var))


def separation_for(rho: float, p_pos: float) -> float:
    """Latent class separation giving point-biserial correlation ``rho`` (bisection)."""
    if rho <= 0:
        return 0.0
    lo, hi = 0.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_correlation(mid, p_pos) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def flip_probability(disagreement: float) -> float:
    """Per-analyst flip rate so that two independent analysts disagree at the given rate."""
    if not 0 <= disagreement <= 0.5:
        raise ValueError("disagreement must lie in [0, 0.5]")
    return 0.5 * (1.0 - np.sqrt(1.0 - 2.0 * disagreement))


def simulate_scores(
    labels: Sequence[int],
    rho: float,
    disagreement: float = 0.0,
    seed: int = 0,
    event_ids: Sequence[str] | None = None,
    analysts: Sequence[str] = ("A1",),
    scored: Sequence[bool] | None = None,
) -> list[HumanScore]:
    """Five-level ordinal analyst scores.

    Each analyst first perceives the label, flipping it with the probability
    that makes two analysts disagree at ``disagreement``. The score is then a
    quantized Gaussian latent whose class separation is chosen so the
    point-biserial correlation with the perceived label equals ``rho``.
    ``rho == 1`` reproduces the perceived label exactly.
    """
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    y = np.asarray(labels).astype(int)
    n = y.size
    ids = list(event_ids) if event_ids is not None else [f"e{i}" for i in range(n)]
    mask = np.ones(n, bool) if scored is None else np.asarray(scored, bool)
    rng = np.random.default_rng(seed)
    flip = flip_probability(disagreement)
    p_pos = float(y.mean()) if n else 0.5
    a = separation_for(rho, min(max(p_pos, 1e-6), 1 - 1e-6)) if rho < 1 else np.inf
    levels = np.linspace(0.0, 1.0, 5)
    out = []
    for analyst in analysts:
        perceived = np.where(rng.random(n) < flip, 1 - y, y)
        if rho >= 1:
            score = perceived.astype(float)
        else:
            latent = a * (2 * perceived - 1) + rng.standard_normal(n)
            score = levels[np.searchsorted(_CUTS, latent)]
        out.extend(HumanScore(ids[i], analyst, float(score[i])) for i in range(n) if mask[i])
    return out


# --- HK-ANN benchmark data ----------------------------------------------------


@dataclass
class HkDataset:
    features: np.ndarray
    labels: np.ndarray
    event_ids: list[str]
    scores: list[HumanScore]
    train: np.ndarray  # boolean row mask
    feature_names: tuple[str, ...]


def hk_benchmark(
    n_events: int = 5000,
    n_scored: int = 2500,
    rho: float = 0.8,
    seed: int = 0,
    positive_rate: float = 0.3,
    separation: float = 0.35,
    disagreement: float = 0.0,
) -> HkDataset:
    """Labeled candidate events with weak machine features and partial analyst scores.

    Machine features are six class-conditional Gaussians offset by
    ``separation`` standard deviations; analysts score ``n_scored`` randomly
    chosen events. Rows are split half for training, half for testing.
    """
    rng = np.random.default_rng(seed)
    y = (rng.random(n_events) < positive_rate).astype(int)
    d = 6
    shift = separation * np.linspace(1.0, 0.5, d)
    x = rng.standard_normal((n_events, d)) + y[:, None] * shift[None, :]
    ids = [f"hk:{i}" for i in range(n_events)]
    scored = np.zeros(n_events, bool)
    scored[rng.choice(n_events, size=n_scored, replace=False)] = True
    scores = simulate_scores(y, rho, disagreement, seed=seed + 1, event_ids=ids, scored=scored)
    train = np.zeros(n_events, bool)
    train[rng.permutation(n_events)[: n_events // 2]] = True
    names = ("duration", "bandwidth", "peak_freq", "energy", "slope", "machine_score")
    return HkDataset(x, y, ids, scores, train, names)
