import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adamine.dsp import stft
from adamine.errors import InsufficientPulses
from adamine.pulsetrain import TrainParams, detect_pulses, extract_trains, pulse_train_score, type2_detect
from adamine.synthbench import SceneSpec, Signal, render_scene

HOP = 0.01


def _impulses(times, n=500, hop=HOP):
    p = np.zeros(n)
    for t in times:
        p[int(round(t / hop))] = 1.0
    return p


# detect_pulses


def test_impulses_recovered_exactly():
    got = detect_pulses(_impulses([1.0, 2.0, 3.0]), HOP, 0.5, 0.1)
    assert got == pytest.approx([1.0, 2.0, 3.0])


def test_constant_below_threshold_is_empty():
    assert detect_pulses(np.full(100, 0.3), HOP, 0.5, 0.1) == []


def test_double_peak_merges_to_larger():
    p = np.zeros(300)
    p[100], p[105] = 0.8, 1.0  # 0.05 s apart
    assert detect_pulses(p, HOP, 0.5, 0.1) == pytest.approx([1.05])


def test_detect_pulses_preconditions():
    with pytest.raises(ValueError):
        detect_pulses(np.ones(3), HOP, 0.0, 0.1)
    with pytest.raises(ValueError):
        detect_pulses(np.ones(3), HOP, 0.5, HOP / 2)


def test_detect_pulses_offset():
    got = detect_pulses(_impulses([0.5]), HOP, 0.5, 0.1, t0=100.0)
    assert got == pytest.approx([100.5])


# pulse_train_score


def test_exact_period():
    tr = pulse_train_score(0.5 * np.arange(10))
    assert tr.period == pytest.approx(0.5)
    assert tr.regularity == pytest.approx(1.0)
    assert tr.count == 10
    assert tr.span == pytest.approx((0.0, 4.5))


def test_two_pulses_insufficient():
    with pytest.raises(InsufficientPulses):
        pulse_train_score([0.0, 1.0])


def test_jitter_five_percent():
    rng = np.random.default_rng(2024)
    period = 0.5
    t = period * np.arange(20) + rng.normal(0, 0.05 * period, 20)
    tr = pulse_train_score(t)
    # oracle: direct formula on the sorted times
    iv = np.diff(np.sort(t))
    assert tr.period == pytest.approx(np.median(iv))
    assert tr.regularity == pytest.approx(1 - min(1, iv.std() / np.median(iv)))
    assert abs(tr.period - period) <= 0.05 * period
    assert 0.8 <= tr.regularity < 1.0


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0.05, 2.0), min_size=2, max_size=30),
    st.floats(-1e3, 1e3),
    st.floats(0.1, 10.0),
)
def test_translation_and_scale(intervals, shift, c):
    t = np.concatenate([[0.0], np.cumsum(intervals)])
    base = pulse_train_score(t)
    moved = pulse_train_score(t + shift)
    scaled = pulse_train_score(c * t)
    assert moved.period == pytest.approx(base.period, rel=1e-6, abs=1e-9)
    assert moved.regularity == pytest.approx(base.regularity, abs=1e-6)
    assert scaled.period == pytest.approx(c * base.period, rel=1e-9)
    assert scaled.regularity == pytest.approx(base.regularity, abs=1e-9)
    assert 0.0 <= base.regularity <= 1.0


# extract_trains


def _best_subset(times, min_pulses):
    """Exhaustive oracle: most regular subset, ties to more pulses then earlier start."""
    best, best_key = None, None
    for r in range(min_pulses, len(times) + 1):
        for combo in itertools.combinations(range(len(times)), r):
            tr = pulse_train_score([times[i] for i in combo])
            key = (round(tr.regularity, 9), tr.count, -tr.pulse_times[0])
            if best_key is None or key > best_key:
                best, best_key = combo, key
    return best


def test_interleaved_trains_match_exhaustive_search():
    a = [round(0.1 + 0.4 * k, 9) for k in range(10)]
    b = [round(0.25 + 1.0 * k, 9) for k in range(5)]
    times = sorted(a + b)
    assert len(set(times)) == 15
    params = TrainParams(min_pulses=5)

    oracle = []
    rest = list(times)
    while len(rest) >= params.min_pulses:
        combo = _best_subset(rest, params.min_pulses)
        tr = pulse_train_score([rest[i] for i in combo])
        if tr.regularity < params.min_regularity:
            break
        oracle.append(tr.pulse_times)
        rest = [t for i, t in enumerate(rest) if i not in combo]

    got = extract_trains(times, params)
    assert [tuple(pytest.approx(x) for x in g.pulse_times) for g in got] == oracle
    assert len(got) == 2
    assert got[0].pulse_times == pytest.approx(a)
    assert got[1].pulse_times == pytest.approx(b)
    assert got[0].period == pytest.approx(0.4) and got[1].period == pytest.approx(1.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.0, 60.0), min_size=0, max_size=40, unique=True), st.integers(3, 8))
def test_extraction_bounds(times, min_pulses):
    params = TrainParams(min_pulses=min_pulses)
    trains = extract_trains(times, params)
    assert len(trains) <= len(times) // min_pulses
    used = [t for tr in trains for t in tr.pulse_times]
    assert len(used) == len(set(used))
    for tr in trains:
        assert tr.count >= min_pulses
        assert tr.regularity >= params.min_regularity
        assert np.all(np.diff(tr.pulse_times) > 0)


def test_train_params_validation():
    with pytest.raises(ValueError):
        TrainParams(min_pulses=2)
    with pytest.raises(ValueError):
        TrainParams(min_regularity=1.5)
    with pytest.raises(ValueError):
        TrainParams(min_period=3.0, max_period=2.0)


# type2_detect


def _scene(signals, duration=20.0, seed=3):
    sc = render_scene(SceneSpec(duration, 2000, 0.02, tuple(signals), seed=seed))
    return stft(sc.block.samples, 128, 32, "hann", sample_rate=2000)


def _train(start, period, count, jitter=0.0):
    return Signal("pulse_train", start, 15.0,
                  {"freq": 700.0, "pulse_len": 0.05, "period": period, "count": count, "jitter": jitter})


def test_type2_recovers_synthetic_train():
    spec = _scene([_train(2.0, 0.4, 20)])
    events = type2_detect(spec, (650.0, 750.0), detector_id="pt", tag="pulse_train")
    assert len(events) == 1
    e = events[0]
    assert e.f_lo == 650.0 and e.f_hi == 750.0
    assert e.detector_id == "pt" and e.tag == "pulse_train"
    # span covers 20 pulses at 0.4 s
    n_est = round((e.end_time - e.begin_time) / 1000 / 0.4) + 1
    assert abs(n_est - 20) <= 1
    proj_pulses = 19 * 0.4
    assert abs((e.end_time - e.begin_time) / 1000 - proj_pulses) <= 0.1 * proj_pulses + 0.1
    assert e.score >= TrainParams().min_regularity


def test_type2_period_and_count_from_pulses():
    from adamine.dsp import energy_projection

    spec = _scene([_train(2.0, 0.4, 20)])
    proj = energy_projection(spec, "time", (650.0, 750.0))
    med = np.median(proj)
    thr = med + 6.0 * 1.4826 * np.median(np.abs(proj - med))
    pulses = detect_pulses(proj, spec.frame_hop, thr, 0.1, spec.t0)
    (tr,) = extract_trains(pulses)
    assert abs(tr.count - 20) <= 1
    assert tr.period == pytest.approx(0.4, rel=0.10)


def test_type2_isolated_pulse_is_empty():
    spec = _scene([_train(5.0, 0.4, 1)])
    assert type2_detect(spec, (650.0, 750.0)) == []


def test_type2_interleaved_trains():
    # every B pulse sits 0.1 s from the nearest A pulse
    spec = _scene([_train(1.0, 0.4, 20), _train(1.3, 1.0, 8)], duration=14.0)
    events = type2_detect(spec, (650.0, 750.0), min_gap=0.05)
    assert len(events) == 2
    spans = sorted((e.end_time - e.begin_time) / 1000 for e in events)
    assert spans[0] == pytest.approx(7.0, abs=0.3)
    assert spans[1] == pytest.approx(7.6, abs=0.3)


def test_type2_never_emits_below_thresholds():
    params = TrainParams(min_pulses=6, min_regularity=0.9)
    for seed in range(5):
        spec = _scene([_train(1.0, 0.5, 12, jitter=0.08)], seed=seed)
        for e in type2_detect(spec, (650.0, 750.0), params=params):
            assert e.score >= 0.9
