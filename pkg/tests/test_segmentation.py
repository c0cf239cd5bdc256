import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adamine.dsp import BinaryMask, Spectrogram, stft
from adamine.errors import ConsistencyError
from adamine.segmentation import (
    Region,
    Type1Rules,
    connected_regions,
    passes,
    region_features,
    rule_margin,
    type1_detect,
)


def flood_fill_partition(mask, connectivity):
    """Independent oracle: stack-based flood fill from every unvisited true pixel."""
    m = np.asarray(mask, bool)
    seen = np.zeros_like(m)
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
    parts = set()
    for i, j in zip(*np.nonzero(m)):
        if seen[i, j]:
            continue
        comp, stack = [], [(i, j)]
        seen[i, j] = True
        while stack:
            a, b = stack.pop()
            comp.append((int(a), int(b)))
            for da, db in steps:
                x, y = a + da, b + db
                if 0 <= x < m.shape[0] and 0 <= y < m.shape[1] and m[x, y] and not seen[x, y]:
                    seen[x, y] = True
                    stack.append((x, y))
        parts.add(frozenset(comp))
    return parts


def as_partition(regions):
    return {frozenset(r.pixels()) for r in regions}


def test_anti_diagonal_connectivity():
    m = np.array([[0, 1], [1, 0]], bool)
    assert len(connected_regions(m, 4)) == 2
    assert len(connected_regions(m, 8)) == 1


def test_empty_mask():
    assert connected_regions(np.zeros((5, 5), bool)) == []


def test_bad_connectivity():
    with pytest.raises(ValueError):
        connected_regions(np.zeros((2, 2), bool), 6)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.floats(0.05, 0.7), conn=st.sampled_from([4, 8]),
       shape=st.tuples(st.integers(1, 40), st.integers(1, 40)))
def test_matches_flood_fill_and_conserves_pixels(seed, p, conn, shape):
    m = np.random.default_rng(seed).random(shape) < p
    regions = connected_regions(m, conn)
    assert as_partition(regions) == flood_fill_partition(m, conn)
    assert sum(r.n_pixels for r in regions) == int(m.sum())
    keys = [(r.frame_lo, r.bin_lo) for r in regions]
    assert keys == sorted(keys)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), conn=st.sampled_from([4, 8]))
def test_transpose_symmetry(seed, conn):
    m = np.random.default_rng(seed).random((30, 25)) < 0.35
    direct = as_partition(connected_regions(m, conn))
    flipped = {frozenset((b, a) for a, b in part) for part in as_partition(connected_regions(m.T, conn))}
    assert direct == flipped


def test_bbox_is_tight_hull():
    m = np.zeros((10, 10), bool)
    m[2, 3] = m[3, 4] = m[4, 4] = True
    (r,) = connected_regions(BinaryMask(m, {}, 0.5, 10.0, 100.0), 8)
    assert (r.frame_lo, r.frame_hi, r.bin_lo, r.bin_hi) == (2, 4, 3, 4)
    assert r.t_start == pytest.approx(100.0 + 1.5 * 0.5)
    assert r.t_end == pytest.approx(100.0 + 4.5 * 0.5)
    assert (r.f_lo, r.f_hi) == (25.0, 45.0)


def _spec(m, hop=0.1, bw=10.0):
    return Spectrogram(np.asarray(m, float), hop, bw, 0.0, 16, "hann", 160.0)


def test_single_pixel_features():
    m = np.zeros((5, 5))
    m[2, 3] = 4.0
    f = region_features(Region(np.array([2]), np.array([3])), _spec(m))
    assert f.duration == pytest.approx(0.1)
    assert f.bandwidth == pytest.approx(10.0)
    assert f.slope == 0.0
    assert f.total_energy == 16.0
    assert f.peak_freq == 30.0


def test_horizontal_line_has_zero_slope():
    m = np.zeros((20, 8))
    m[5:15, 4] = np.linspace(1, 2, 10)
    r = Region(np.arange(5, 15), np.full(10, 4))
    assert region_features(r, _spec(m)).slope == 0.0


def test_out_of_bounds_region():
    with pytest.raises(ConsistencyError):
        region_features(Region(np.array([9]), np.array([0])), _spec(np.ones((3, 3))))


def _chirp(rate=2000, dur=1.0, f0=100.0, f1=200.0, lead=10.0, noise=0.0, seed=0):
    """Hann-tapered linear sweep starting ``lead`` s into a 2*lead + dur record."""
    n = int((dur + 2 * lead) * rate)
    t = np.arange(int(dur * rate)) / rate
    x = np.zeros(n)
    sweep = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / dur * t**2)) * np.hanning(t.size)
    x[int(lead * rate) : int(lead * rate) + t.size] = sweep
    if noise:
        x += noise * np.random.default_rng(seed).standard_normal(n)
    return x


def test_chirp_slope_within_ten_percent():
    s = stft(_chirp(noise=1e-3), 256, 32, "hann", sample_rate=2000)
    from adamine.dsp import binarize

    regions = connected_regions(binarize(s, 90), 8)
    biggest = max(regions, key=lambda r: r.n_pixels)
    slope = region_features(biggest, s).slope
    assert slope == pytest.approx(100.0, rel=0.10)


def test_rule_margin_shape():
    assert rule_margin(5, (0, 10)) == 1.0
    assert rule_margin(0, (0, 10)) == 0.0
    assert rule_margin(7.5, (0, 10)) == pytest.approx(0.5)
    assert rule_margin(11, (0, 10)) == 0.0
    with pytest.raises(ValueError):
        Type1Rules(duration=(2, 1))


UPCALL = Type1Rules(duration=(0.4, 2.5), bandwidth=(40, 250), slope=(30, 300))


def test_upsweep_in_silence_yields_one_event_at_truth():
    rate, hop, win = 2000, 128, 256
    # a perfectly silent floor lets Hann main-lobe leakage clear the per-bin
    # threshold; a modest floor keeps the mask on the ridge itself
    s = stft(_chirp(noise=0.1), win, hop, "hann", sample_rate=rate)
    events = type1_detect(s, UPCALL, 98, 8, (50, 400))
    assert len(events) == 1
    e = events[0]
    assert 0 <= e.score <= 1
    frame, bw = hop / rate, rate / win
    assert abs(e.begin_time / 1000 - 10.0) <= frame
    assert abs(e.end_time / 1000 - 11.0) <= frame
    assert abs(e.f_lo - 100) <= bw and abs(e.f_hi - 200) <= bw


def test_white_noise_with_strict_rules_is_empty():
    x = np.random.default_rng(42).standard_normal(2000 * 60)
    s = stft(x, 256, 128, "hann", sample_rate=2000)
    assert type1_detect(s, UPCALL, 98, 8, (50, 400)) == []


def test_zero_spectrogram_is_empty():
    assert type1_detect(_spec(np.zeros((10, 10))), UPCALL) == []


def test_emitted_events_satisfy_rules():
    x = _chirp(noise=0.05, seed=3)
    s = stft(x, 256, 64, "hann", sample_rate=2000)
    loose = Type1Rules(duration=(0.05, 5), bandwidth=(5, 600))
    from adamine.dsp import binarize

    mask = binarize(s, 95)
    kept = [region_features(r, s) for r in connected_regions(mask, 8)]
    n_pass = sum(passes(f, loose) for f in kept)
    events = type1_detect(s, loose, 95, 8)
    assert len(events) == n_pass
    assert all(0 <= e.score <= 1 for e in events)
