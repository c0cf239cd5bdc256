import dataclasses

import numpy as np
import pytest

from adamine.archive import SampleBlock
from adamine.classify import init_model
from adamine.dsp import stft
from adamine.errors import ConfigError, PlanError
from adamine.recognizers import Template
from adamine.registry import (
    DetectorConfig,
    Pipeline,
    Registry,
    drop_edge_events,
    hog_ann_detect,
    region_patch,
)
from adamine.segmentation import Type1Rules, type1_detect
from adamine.synthbench import SceneSpec, Signal, render_scene

from conftest import T0, ev

UP = Signal("upsweep", 10.0, 15.0, {"f0": 90.0, "f1": 220.0, "duration": 1.0})
PT = Signal("pulse_train", 3.0, 15.0, {"freq": 700.0, "pulse_len": 0.05, "period": 0.5, "count": 8})


@pytest.fixture(scope="module")
def block():
    return render_scene(SceneSpec(20.0, 2000, 0.02, (UP, PT), seed=1)).block


def test_type1_is_the_documented_chain(block):
    cfg = DetectorConfig("up", "type1", {}, 0.0, "upcall")
    got = Pipeline(cfg)(block)
    spec = stft(block, 256, 128, "hann")
    rules = Type1Rules(duration=(0.4, 2.5), bandwidth=(40.0, 250.0), slope=(30.0, 300.0))
    direct = type1_detect(spec, rules, 98.0, 8, (50.0, 400.0), channel_id=block.channel_id,
                          detector_id="up", tag="upcall")
    assert got == direct
    assert len(got) == 1 and got[0].tag == "upcall"
    assert got[0].begin_time / 1000 - block.start_posix == pytest.approx(10.0, abs=0.2)


def test_type2_pipeline(block):
    events = Pipeline(DetectorConfig("pt", "type2", {"band": (650, 750)}))(block)
    assert len(events) == 1
    assert (events[0].f_lo, events[0].f_hi) == (650.0, 750.0)


def test_same_id_twice_is_deterministic(block):
    reg = Registry([DetectorConfig("up", "type1"), DetectorConfig("pt", "type2", {"band": (650, 750)})])
    for did in reg.ids():
        assert reg.resolve(did)(block) == reg.resolve(did)(block)


def test_validation_errors(tmp_path):
    with pytest.raises(ConfigError, match="model_path"):
        DetectorConfig("h", "hog_ann").validate()
    with pytest.raises(ConfigError, match="band"):
        DetectorConfig("p", "type2").validate()
    with pytest.raises(ConfigError, match="reserved"):
        DetectorConfig("r", "israt").validate()
    with pytest.raises(ConfigError, match="reserved"):
        DetectorConfig("e", "elephant").validate()
    with pytest.raises(ConfigError, match="unknown detector kind"):
        DetectorConfig("x", "magic").validate()
    with pytest.raises(ConfigError, match="unknown parameters"):
        DetectorConfig("u", "type1", {"bogus": 1}).validate()
    with pytest.raises(ConfigError):
        DetectorConfig("u", "type1", {"binarize_p": 120}).validate()
    with pytest.raises(ConfigError):
        DetectorConfig("u", "type1", context_pad=-1).validate()
    with pytest.raises(ConfigError):
        DetectorConfig("t", "template", {"template_path": str(tmp_path / "none")}).validate()
    with pytest.raises(ConfigError, match="duplicate"):
        Registry([DetectorConfig("a", "type1"), DetectorConfig("a", "type1")])
    with pytest.raises(PlanError):
        Registry([DetectorConfig("a", "type1")]).config("b")


def test_template_pipeline(block, tmp_path):
    spec = stft(block, 256, 128, "hann")
    i, j = 155, 10  # the up-sweep starts near frame 155
    Template("sweep", spec.magnitudes[i : i + 10, j : j + 20], f_lo=j * spec.bin_width).save(tmp_path)
    cfg = DetectorConfig("tc", "template", {"template_path": str(tmp_path / "sweep.pgm"), "threshold": 0.9})
    events = Pipeline(cfg)(block)
    assert len(events) >= 1
    best = max(events, key=lambda e: e.score)
    assert best.begin_time / 1000 - block.start_posix == pytest.approx(spec.t0 - block.start_posix + (i - 0.5) * spec.frame_hop, abs=1e-3)
    assert best.score == pytest.approx(1.0, abs=1e-2)


def test_hog_ann_pipeline(block, tmp_path):
    model = init_model((144, 4, 1), seed=0)
    for w in model.weights:
        w[:] = 0.0
    model.save(tmp_path / "m.txt")  # constant 0.5 scorer
    cfg = DetectorConfig("h", "hog_ann", {"model_path": str(tmp_path / "m.txt"), "threshold": 0.5})
    events = Pipeline(cfg)(block)
    assert events and all(e.score == 0.5 for e in events)
    strict = DetectorConfig("h", "hog_ann", {"model_path": str(tmp_path / "m.txt"), "threshold": 0.6})
    assert Pipeline(strict)(block) == []
    bad = init_model((10, 1))
    bad.save(tmp_path / "bad.txt")
    with pytest.raises(ConfigError, match="144"):
        DetectorConfig("h", "hog_ann", {"model_path": str(tmp_path / "bad.txt")}).validate()
    spec = stft(block, 256, 128, "hann")
    silent = dataclasses.replace(spec, magnitudes=np.zeros_like(spec.magnitudes))
    assert hog_ann_detect(silent, model) == []


def test_region_patch_shape():
    from adamine.dsp import Spectrogram, binarize
    from adamine.segmentation import connected_regions

    m = np.zeros((20, 20))
    m[3:9, 4:7] = np.arange(18).reshape(6, 3) + 1
    spec = Spectrogram(m, 0.1, 10.0, 0.0, 38, "hann")
    (r,) = connected_regions(binarize(spec, 50), 8)
    p = region_patch(spec, r, (32, 32))
    assert p.shape == (32, 32) and p.min() >= 1 and p.max() <= 18


def test_drop_edge_events():
    blk = SampleBlock("A", T0, 2000, np.zeros(2000 * 60), pad_before=5.0, pad_after=0.0)
    near_start = ev(0.05, 1.0)
    middle = ev(30, 31)
    near_end = ev(59.0, 59.95)
    assert drop_edge_events([near_start, middle, near_end], blk, 0.128) == [middle, near_end]
    unpadded = SampleBlock("A", T0, 2000, np.zeros(2000 * 60))
    assert len(drop_edge_events([near_start, middle, near_end], unpadded, 0.128)) == 3


def test_short_block_is_empty():
    blk = SampleBlock("A", T0, 2000, np.zeros(100))
    assert Pipeline(DetectorConfig("up", "type1"))(blk) == []
