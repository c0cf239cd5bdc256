"""Detector registry: config blocks -> runnable SampleBlock pipelines.

A pipeline is stft -> kind-specific detection -> edge filtering. Events that
touch a padded edge of the block are dropped because the neighbouring unit
sees them whole; unpadded edges (archive boundaries) keep them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.ndimage import zoom

from .archive import SampleBlock
from .classify import MlpModel, mlp_predict
from .dsp import BinaryMask, Spectrogram, binarize, stft
from .errors import ConfigError, FormatError, PlanError
from .events import EventRecord, make_event
from .pulsetrain import TrainParams, type2_detect
from .recognizers import Template, hog_features, template_correlate
from .segmentation import Type1Rules, connected_regions, type1_detect

KINDS = ("type1", "type2", "template", "hog_ann")
RESERVED_KINDS = ("israt", "elephant")

DSP_DEFAULTS = {"window_len": 256, "hop": 128, "window_kind": "hann"}

# Per-kind parameters and defaults; ``None`` marks a required parameter.
KIND_PARAMS: dict[str, dict] = {
    "type1": {
        "binarize_p": 98.0,
        "connectivity": 8,
        "band": (50.0, 400.0),
        "duration": (0.4, 2.5),
        "bandwidth": (40.0, 250.0),
        "slope": (30.0, 300.0),
        "energy": None,
    },
    "type2": {
        # short pulses need finer time resolution than the shared defaults
        "window_len": 128,
        "hop": 32,
        "band": None,
        "threshold_factor": 6.0,
        "min_gap": 0.1,
        "min_pulses": 5,
        "min_regularity": 0.7,
        "max_period": 2.0,
        "min_period": 0.0,
        "tolerance": 0.25,
    },
    "template": {
        "template_path": None,
        "threshold": 0.6,
        "band_slack": None,
    },
    "hog_ann": {
        "model_path": None,
        "threshold": 0.5,
        "binarize_p": 98.0,
        "connectivity": 8,
        "band": None,
        "min_pixels": 8,
        "patch_shape": (32, 32),
        "cell_size": 8,
        "n_bins": 9,
    },
}
# Optional-by-design parameters whose default is None but which are not required.
_OPTIONAL_NONE = {("type1", "energy"), ("template", "band_slack"), ("hog_ann", "band")}


@dataclass(frozen=True)
class DetectorConfig:
    detector_id: str
    kind: str
    params: Mapping = field(default_factory=dict)
    context_pad: float = 0.0
    tag: str = ""

    def resolved_params(self) -> dict:
        merged = dict(DSP_DEFAULTS)
        merged.update(KIND_PARAMS.get(self.kind, {}))
        merged.update(self.params)
        return merged

    def validate(self) -> None:
        if not self.detector_id:
            raise ConfigError("detector id must be non-empty")
        if self.kind in RESERVED_KINDS:
            raise ConfigError(f"detector kind {self.kind!r} is reserved but not implemented")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown detector kind {self.kind!r}; expected one of {KINDS}")
        if self.context_pad < 0:
            raise ConfigError(f"{self.detector_id}: context_pad must be >= 0")
        allowed = set(DSP_DEFAULTS) | set(KIND_PARAMS[self.kind])
        unknown = sorted(set(self.params) - allowed)
        if unknown:
            raise ConfigError(f"{self.detector_id}: unknown parameters {unknown}")
        p = self.resolved_params()
        missing = sorted(
            k for k, v in p.items() if v is None and (self.kind, k) not in _OPTIONAL_NONE
        )
        if missing:
            raise ConfigError(f"{self.detector_id} ({self.kind}) requires {missing}")
        if p["window_kind"] not in ("hann", "rectangular"):
            raise ConfigError(f"{self.detector_id}: window_kind must be hann or rectangular")
        if int(p["hop"]) < 1 or int(p["window_len"]) < 2:
            raise ConfigError(f"{self.detector_id}: bad window_len/hop")
        try:
            _build_detect(self, p)
        except (TypeError, ValueError, OSError, FormatError) as exc:
            raise ConfigError(f"{self.detector_id}: {exc}") from exc


def _window(v):
    return None if v is None else (float(v[0]), float(v[1]))


def _build_detect(cfg: DetectorConfig, p: dict) -> Callable[[Spectrogram, str], list[EventRecord]]:
    """Turn parameters into a spectrogram-level detection closure (validating them)."""
    ids = {"detector_id": cfg.detector_id, "tag": cfg.tag}
    if cfg.kind == "type1":
        rules = Type1Rules(
            duration=_window(p["duration"]),
            bandwidth=_window(p["bandwidth"]),
            slope=_window(p["slope"]),
            energy=_window(p["energy"]),
        )
        band = _window(p["band"])
        bp, conn = float(p["binarize_p"]), int(p["connectivity"])
        if not 0 < bp < 100 or conn not in (4, 8):
            raise ValueError("binarize_p must be in (0, 100) and connectivity 4 or 8")
        return lambda spec, ch: type1_detect(spec, rules, bp, conn, band, channel_id=ch, **ids)
    if cfg.kind == "type2":
        band = _window(p["band"])
        if band[0] >= band[1]:
            raise ValueError("band must satisfy f_lo < f_hi")
        train = TrainParams(
            min_pulses=int(p["min_pulses"]),
            min_regularity=float(p["min_regularity"]),
            max_period=float(p["max_period"]),
            min_period=float(p["min_period"]),
            tolerance=float(p["tolerance"]),
        )
        tf, gap = float(p["threshold_factor"]), float(p["min_gap"])
        if tf <= 0:
            raise ValueError("threshold_factor must be positive")
        return lambda spec, ch: type2_detect(spec, band, tf, gap, train, channel_id=ch, **ids)
    if cfg.kind == "template":
        template = Template.load(p["template_path"])
        thr = float(p["threshold"])
        slack = None if p["band_slack"] is None else float(p["band_slack"])
        return lambda spec, ch: template_correlate(spec, template, thr, slack, channel_id=ch, **ids)
    if cfg.kind == "hog_ann":
        model = MlpModel.load(p["model_path"])
        shape = (int(p["patch_shape"][0]), int(p["patch_shape"][1]))
        cell, nb = int(p["cell_size"]), int(p["n_bins"])
        expected = (shape[0] // cell) * (shape[1] // cell) * nb
        if shape[0] % cell or shape[1] % cell:
            raise ValueError("patch_shape must be divisible by cell_size")
        if model.n_inputs != expected:
            raise ValueError(f"model expects {model.n_inputs} inputs, HOG gives {expected}")
        opts = dict(
            threshold=float(p["threshold"]),
            binarize_p=float(p["binarize_p"]),
            connectivity=int(p["connectivity"]),
            band=_window(p["band"]),
            min_pixels=int(p["min_pixels"]),
            patch_shape=shape,
            cell_size=cell,
            n_bins=nb,
        )
        return lambda spec, ch: hog_ann_detect(spec, model, channel_id=ch, **opts, **ids)
    raise ConfigError(f"unknown detector kind {cfg.kind!r}")


def region_patch(spec: Spectrogram, region, shape: tuple[int, int]) -> np.ndarray:
    """The region's bounding box of magnitudes, resampled to ``shape``."""
    sub = spec.magnitudes[region.frame_lo : region.frame_hi + 1, region.bin_lo : region.bin_hi + 1]
    factors = (shape[0] / sub.shape[0], shape[1] / sub.shape[1])
    out = zoom(sub, factors, order=1, mode="nearest", grid_mode=True)
    return out[: shape[0], : shape[1]]


def hog_ann_detect(
    spec: Spectrogram,
    model: MlpModel,
    threshold: float = 0.5,
    binarize_p: float = 98.0,
    connectivity: int = 8,
    band=None,
    min_pixels: int = 8,
    patch_shape=(32, 32),
    cell_size: int = 8,
    n_bins: int = 9,
    *,
    channel_id: str = "",
    detector_id: str = "",
    tag: str = "",
) -> list[EventRecord]:
    """Segment with CRA, describe each region by HOG, score it with the MLP."""
    if not np.any(spec.magnitudes):
        return []
    mask = binarize(spec, binarize_p).mask
    if band is not None:
        keep = np.zeros(spec.n_bins, bool)
        keep[spec.band_bins(*band)] = True
        mask = mask & keep[None, :]
    regions = connected_regions(BinaryMask(mask, {}, spec.frame_hop, spec.bin_width, spec.t0), connectivity)
    events = []
    for r in regions:
        if r.n_pixels < min_pixels:
            continue
        desc = hog_features(region_patch(spec, r, patch_shape), cell_size, n_bins)
        score = float(mlp_predict(model, desc.vector))
        if score >= threshold:
            events.append(
                make_event(r.t_start, r.t_end, r.f_lo, r.f_hi, score,
                           channel_id=channel_id, detector_id=detector_id, tag=tag)
            )
    return events


class Pipeline:
    """Reentrant callable: SampleBlock -> events. Holds no mutable state."""

    def __init__(self, config: DetectorConfig):
        config.validate()
        self.config = config
        p = config.resolved_params()
        self.window_len = int(p["window_len"])
        self.hop = int(p["hop"])
        self.window_kind = p["window_kind"]
        self._detect = _build_detect(config, p)

    def spectrogram(self, block: SampleBlock) -> Spectrogram:
        return stft(block, self.window_len, self.hop, self.window_kind)

    def __call__(self, block: SampleBlock) -> list[EventRecord]:
        if len(block.samples) < self.window_len:
            return []
        spec = self.spectrogram(block)
        events = self._detect(spec, block.channel_id)
        return drop_edge_events(events, block, self.window_len / block.sample_rate)


def drop_edge_events(events: list[EventRecord], block: SampleBlock, margin: float) -> list[EventRecord]:
    start_ms = block.start_posix * 1000.0
    end_ms = start_ms + block.duration * 1000.0
    margin_ms = margin * 1000.0
    out = []
    for ev in events:
        if block.pad_before > 0 and ev.begin_time <= start_ms + margin_ms:
            continue
        if block.pad_after > 0 and ev.end_time >= end_ms - margin_ms:
            continue
        out.append(ev)
    return out


class Registry:
    """Immutable mapping of detector ids to validated configs."""

    def __init__(self, configs):
        configs = list(configs)
        seen: dict[str, DetectorConfig] = {}
        for c in configs:
            if c.detector_id in seen:
                raise ConfigError(f"duplicate detector id {c.detector_id!r}")
            c.validate()
            seen[c.detector_id] = c
        self._configs = seen

    def __contains__(self, detector_id: str) -> bool:
        return detector_id in self._configs

    def ids(self) -> list[str]:
        return list(self._configs)

    def config(self, detector_id: str) -> DetectorConfig:
        try:
            return self._configs[detector_id]
        except KeyError:
            raise PlanError(f"unknown detector id {detector_id!r}") from None

    def resolve(self, detector_id: str) -> Pipeline:
        return Pipeline(self.config(detector_id))


def resolve(config: DetectorConfig) -> Pipeline:
    return Pipeline(config)
