from pathlib import Path

import pytest

from adamine.config import load_config, parse_config, parse_value
from adamine.errors import ConfigError, PlanError

SHIPPED = Path(__file__).resolve().parents[1] / "configs" / "synthetic_scene.cfg"

MINIMAL = """
[archive]
root = data
[job]
unit_len = 30
[detector up]
kind = type1
"""


def test_parse_value():
    assert parse_value("none") is None
    assert parse_value(" 3 ") == 3 and isinstance(parse_value("3"), int)
    assert parse_value("2.5") == 2.5
    assert parse_value("650, 750") == (650, 750)
    assert parse_value("hann") == "hann"


def test_shipped_config(tmp_path):
    cfg = load_config(SHIPPED)
    assert cfg.job.job_id == "scene" and cfg.job.workers == 2
    assert [d.detector_id for d in cfg.job.detectors] == ["up", "pt"]
    assert cfg.job.effective_pad == 10.0
    assert cfg.archive_root == SHIPPED.parent / "scratch" / "archive"
    assert cfg.scene.duration == 200 and len(cfg.scene.signals) == 7
    assert cfg.scene_file_len == 100 and cfg.seed == 1
    assert cfg.job.detectors[1].params["band"] == (650, 750)
    assert len(cfg.config_hash) == 16
    assert cfg.metadata()["config_hash"] == cfg.config_hash


def test_defaults_and_relative_paths(tmp_path):
    cfg = parse_config(MINIMAL, tmp_path / "job.cfg")
    assert cfg.archive_root == tmp_path / "data"
    assert cfg.job.job_id == "job" and cfg.job.workers == 1 and cfg.job.backend == "flat"
    assert cfg.job.output is None and cfg.scene is None
    assert cfg.job.merge_dt == 0.5 and cfg.job.merge_df == 10.0


def test_hash_tracks_text(tmp_path):
    a = parse_config(MINIMAL, tmp_path / "a.cfg")
    b = parse_config(MINIMAL + "tag = x\n", tmp_path / "a.cfg")
    assert a.config_hash != b.config_hash


@pytest.mark.parametrize(
    "extra,match",
    [
        ("[bogus]\nx = 1\n", "unknown section"),
        ("[archive extra]\n", "unknown section"),
        ("[detector]\nkind = type1\n", "needs a name"),
        ("[detector t2]\nkind = type2\n", "band"),
        ("[detector h]\nkind = hog_ann\n", "model_path"),
        ("[detector x]\nkind = type1\nfoo = 1\n", "unknown parameters"),
        ("[signal s]\nkind = tone\nstart = 1\nsnr_db = 3\nfreq = 100\nduration = 1\n", "require a \\[scene\\]"),
    ],
)
def test_rejections(tmp_path, extra, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(MINIMAL + extra, tmp_path / "j.cfg")


def test_unknown_keys_in_sections(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(MINIMAL.replace("unit_len = 30", "unit_len = 30\ncolour = red"), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="root or manifest"):
        parse_config(MINIMAL.replace("root = data", ""), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="missing \\[job\\]"):
        parse_config("[archive]\nroot = x\n", tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="unit_len"):
        parse_config(MINIMAL.replace("unit_len = 30", "unit_len = many"), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="backend"):
        parse_config(MINIMAL.replace("unit_len = 30", "unit_len = 30\nbackend = csv"), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("no section header\n", tmp_path / "j.cfg")


def test_unknown_detector_in_job_list(tmp_path):
    text = MINIMAL.replace("unit_len = 30", "unit_len = 30\ndetectors = up, nope")
    with pytest.raises(PlanError, match="nope"):
        parse_config(text, tmp_path / "j.cfg")


def test_scene_and_signal_checks(tmp_path):
    scene = "[scene]\nduration = 20\nrate = 2000\n"
    sig = "[signal s]\nkind = tone\nstart = 1\nsnr_db = 3\nfreq = 100\nduration = 1\n"
    cfg = parse_config(MINIMAL + scene + sig, tmp_path / "j.cfg")
    assert cfg.scene.signals[0].params == {"freq": 100, "duration": 1}
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(MINIMAL + scene + sig + "period = 2\n", tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="missing keys"):
        parse_config(MINIMAL + scene + sig.replace("freq = 100\n", ""), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="does not fit"):
        parse_config(MINIMAL + scene + sig.replace("start = 1", "start = 19.5"), tmp_path / "j.cfg")
    with pytest.raises(ConfigError, match="start"):
        parse_config(MINIMAL + scene + "start = yesterday\n", tmp_path / "j.cfg")


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")
