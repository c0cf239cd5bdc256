from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from adamine.archive import archive_filename, write_wav
from adamine.events import make_event

T0 = datetime(2006, 1, 1, tzinfo=timezone.utc)


def write_files(root: Path, channel: str, spans, rate=2000, bit_depth=16, seed=0, amplitude=0.3):
    """Write one WAV per (offset_s, length_s) span; returns the concatenated sample arrays."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    out = []
    for offset, length in spans:
        x = amplitude * rng.uniform(-1, 1, int(round(length * rate)))
        write_wav(root / archive_filename(channel, T0 + timedelta(seconds=offset)), x, rate, bit_depth)
        out.append(x)
    return out


@pytest.fixture
def small_archive(tmp_path):
    """Channel A: two contiguous 60 s files at 2 kHz."""
    root = tmp_path / "arch"
    write_files(root, "A", [(0, 60), (60, 60)])
    return root


def ev(t0, t1, f0=100.0, f1=200.0, score=0.5, **kw):
    base = T0.timestamp()
    kw.setdefault("channel_id", "A")
    kw.setdefault("detector_id", "d")
    return make_event(base + t0, base + t1, f0, f1, score, **kw)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Print and keep one pass/fail line per acceptance criterion."""

    def _record(n, status, detail):
        line = f"criterion {n:>2}: {status:<4} {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
