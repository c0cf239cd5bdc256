import shutil
from pathlib import Path

import pytest

from adamine.classify import HumanScore, write_scores
from adamine.cli import EXIT_INVALID, EXIT_OK, EXIT_PATH, main, scores_path
from adamine.events import format_iso_ms
from adamine.eventstore import store_load
from adamine.evalkit import curve, match_events, tpr_at_fpr

SCENE_CFG = """
[archive]
root = archive

[job]
job_id = small
unit_len = 30
workers = {workers}
backend = flat
output = events.tsv
seed = 7

[detector up]
kind = type1
context_pad = 3

[detector pt]
kind = type2
band = 650, 750
context_pad = 10

[scene]
duration = 60
rate = 2000
noise_rms = 0.02
seed = 1
file_len = 30
truth = truth.tsv

[signal u1]
kind = upsweep
start = 12
snr_db = 15
f0 = 90
f1 = 220
duration = 1.0

[signal p1]
kind = pulse_train
start = 36
snr_db = 15
freq = 700
pulse_len = 0.05
period = 0.5
count = 10
"""


def _write_cfg(d: Path, workers=1) -> Path:
    d.mkdir(parents=True, exist_ok=True)
    p = d / "job.cfg"
    p.write_text(SCENE_CFG.format(workers=workers))
    return p


def _strip_meta(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


@pytest.fixture(scope="module")
def job(tmp_path_factory):
    d = tmp_path_factory.mktemp("job")
    cfg = _write_cfg(d)
    code = main(["run", str(cfg), "--tasks", str(d / "tasks.tsv"), "--diel", str(d / "diel.tsv"),
                 "--figure", str(d / "diel.png")])
    assert code == EXIT_OK
    assert main(["scan", str(d / "archive"), "--out", str(d / "manifest.tsv")]) == EXIT_OK
    return d


def test_run_recovers_planted_events(job):
    events = store_load("flat", job / "events.tsv")
    truth = store_load("flat", job / "truth.tsv")
    assert len(truth) == 2
    m = match_events(events, truth, 0.25)
    assert m.matched_truth == 2
    assert m.false_positives <= 1


def test_run_side_outputs(job):
    tasks = (job / "tasks.tsv").read_text()
    assert tasks.startswith("# adamine ")
    assert "# config_hash: " in tasks
    assert (job / "diel.tsv").read_text().startswith("# adamine ")
    assert (job / "diel.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_run_is_idempotent(job, tmp_path):
    cfg = _write_cfg(tmp_path / "again", workers=2)
    assert main(["run", str(cfg), "--diel", str(tmp_path / "again" / "diel.tsv")]) == EXIT_OK
    assert (tmp_path / "again" / "events.tsv").read_bytes() == (job / "events.tsv").read_bytes()
    assert (tmp_path / "again" / "truth.tsv").read_bytes() == (job / "truth.tsv").read_bytes()
    # the diel table carries the same config hash only if the text matches; compare bodies
    assert _strip_meta((tmp_path / "again" / "diel.tsv").read_text()) == _strip_meta((job / "diel.tsv").read_text())


def test_run_bad_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_PATH
    bad = tmp_path / "bad.cfg"
    bad.write_text("[archive]\nroot = x\n[job]\nunit_len = 30\ncolour = red\n")
    assert main(["run", str(bad)]) == EXIT_INVALID
    assert "colour" in capsys.readouterr().err


def test_scan(job, tmp_path, capsys):
    text = (job / "manifest.tsv").read_text()
    assert len([ln for ln in text.splitlines() if ln and not ln.startswith("#")]) >= 2
    assert main(["scan", str(tmp_path / "missing"), "--out", str(tmp_path / "m.tsv")]) == EXIT_PATH
    assert not (tmp_path / "m.tsv").exists()
    assert "missing" in capsys.readouterr().err


def test_eval(job, tmp_path, capsys):
    out = tmp_path / "roc.tsv"
    code = main(["eval", "--store", str(job / "events.tsv"), "--truth", str(job / "truth.tsv"),
                 "--kind", "det", "--out", str(out), "--fpr", "0.06", "--svg", str(tmp_path / "c.svg"),
                 "--figure", str(tmp_path / "c.png")])
    err = capsys.readouterr()
    if code == EXIT_INVALID:
        # all detections are true positives: one class only
        assert "curve" in err.err
        return
    assert code == EXIT_OK
    assert "# tpr_at_fpr\t0.06\t" in out.read_text()
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<")
    assert (tmp_path / "c.png").stat().st_size > 0


def test_eval_single_class_is_validation_failure(job, tmp_path, capsys):
    # truth against itself: every detection matches, no negatives
    code = main(["eval", "--store", str(job / "truth.tsv"), "--truth", str(job / "truth.tsv"),
                 "--out", str(tmp_path / "x.tsv")])
    assert code == EXIT_INVALID
    assert "adamine eval:" in capsys.readouterr().err


def test_eval_with_mixed_labels(job, tmp_path):
    # append a far-off false alarm so both classes are present
    from dataclasses import replace

    from adamine.eventstore import store_write

    events = store_load("flat", job / "events.tsv")
    fa = replace(events[0], event_id="fa:0", begin_time=events[0].begin_time + 5000,
                 end_time=events[0].end_time + 5000, score=0.0)
    mixed = tmp_path / "mixed.tsv"
    store_write("flat", mixed, events + [fa])
    out = tmp_path / "roc.tsv"
    code = main(["eval", "--store", str(mixed), "--truth", str(job / "truth.tsv"), "--out", str(out),
                 "--fpr", "0.06", "--svg", str(tmp_path / "c.svg"), "--figure", str(tmp_path / "c.png")])
    assert code == EXIT_OK
    text = out.read_text()
    labels = match_events(events + [fa], store_load("flat", job / "truth.tsv"), 0.25).labels
    c = curve([e.score for e in events + [fa]], list(labels), "roc")
    assert f"# tpr_at_fpr\t0.06\t{tpr_at_fpr(c, 0.06):.6f}" in text
    assert "<svg" in (tmp_path / "c.svg").read_text()
    assert (tmp_path / "c.png").read_bytes()[:4] == b"\x89PNG"
    assert main(["eval", "--store", str(mixed), "--truth", str(job / "truth.tsv"), "--out", str(out),
                 "--kind", "pr", "--fpr", "0.1"]) == EXIT_INVALID


def test_export_clips(job, tmp_path):
    out = tmp_path / "clips"
    assert main(["export-clips", "--store", str(job / "events.tsv"), "--archive", str(job / "manifest.tsv"),
                 "--out", str(out)]) == EXIT_OK
    events = store_load("flat", job / "events.tsv")
    for e in events:
        data = (out / f"{e.event_id}.pgm").read_bytes()
        assert data.startswith(b"P5\n")
    rows = _strip_meta((out / "index.tsv").read_text())
    assert len(rows) == len(events) + 1
    first = rows[1].split("\t")
    assert first[1] == events[0].event_id
    assert first[3] == format_iso_ms(events[0].begin_time)


def test_import_scores_rejects_unknown_ids(job, tmp_path, capsys):
    store = tmp_path / "events.tsv"
    shutil.copy(job / "events.tsv", store)
    before = store.read_bytes()
    events = store_load("flat", store)
    f = tmp_path / "scores.tsv"
    write_scores(f, [HumanScore(events[0].event_id, "a1", 1.0), HumanScore("ghost:9", "a1", 0.5)])
    assert main(["import-scores", "--file", str(f), "--store", str(store)]) == EXIT_INVALID
    assert "ghost:9" in capsys.readouterr().err
    assert store.read_bytes() == before
    assert not scores_path(store).exists()


def test_import_then_post_train(job, tmp_path):
    store = tmp_path / "events.tsv"
    shutil.copy(job / "events.tsv", store)
    events = store_load("flat", store)
    f = tmp_path / "scores.tsv"
    levels = [0.0, 1.0]
    write_scores(f, [HumanScore(e.event_id, "a1", levels[i % 2]) for i, e in enumerate(events)])
    assert main(["import-scores", "--file", str(f), "--store", str(store)]) == EXIT_OK
    side = scores_path(store).read_text()
    assert main(["import-scores", "--file", str(f), "--store", str(store)]) == EXIT_OK
    assert scores_path(store).read_text() == side

    model = tmp_path / "model.txt"
    args = ["post-train", "--store", str(store), "--out", str(model), "--seed", "3", "--epochs", "50"]
    assert main(args) == EXIT_OK
    first = model.read_bytes()
    summary = Path(str(model) + ".summary.tsv").read_text()
    assert "trained_rows\t" in summary and "label_source\tanalyst scores" in summary
    assert main(args) == EXIT_OK
    assert model.read_bytes() == first

    assert main(args[:-2] + ["--truth", str(job / "truth.tsv"), "--epochs", "20"]) == EXIT_OK
    assert "label_source\ttruth store" in Path(str(model) + ".summary.tsv").read_text()


def test_post_train_without_scores(job, tmp_path):
    store = tmp_path / "events.tsv"
    shutil.copy(job / "events.tsv", store)
    assert main(["post-train", "--store", str(store), "--out", str(tmp_path / "m.txt")]) == EXIT_PATH


def test_diel(job, tmp_path):
    out = tmp_path / "diel.tsv"
    assert main(["diel", "--store", str(job / "events.tsv"), "--offset", "-5", "--out", str(out),
                 "--figure", str(tmp_path / "diel.svg")]) == EXIT_OK
    text = out.read_text()
    assert "# utc_offset: -5.0" in text
    assert (tmp_path / "diel.svg").read_text().count("<svg") == 1
    assert main(["diel", "--store", str(tmp_path / "none.tsv"), "--out", str(out)]) == EXIT_PATH


def test_bench_store(tmp_path, capsys):
    out = tmp_path / "bench.tsv"
    assert main(["bench-store", "--n", "2000", "--seed", "1", "--repeats", "1", "--out", str(out),
                 "--figure", str(tmp_path / "b.png")]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "query-time ordering:" in printed
    body = _strip_meta(out.read_text())
    assert {r.split("\t")[0] for r in body[1:]} == {"flat", "array", "indexed", "xml"}
    assert (tmp_path / "b.png").stat().st_size > 0
    assert main(["bench-store", "--n", "999"]) == EXIT_INVALID


def test_bench_scale(job, tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "scale")
    out = tmp_path / "scale.tsv"
    assert main(["bench-scale", str(cfg), "--workers", "1,2", "--out", str(out),
                 "--figure", str(tmp_path / "s.png")]) == EXIT_OK
    rows = _strip_meta(out.read_text())
    assert rows[0].split("\t") == ["workers", "wall_s", "speedup", "events", "failures"]
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2"]
    assert rows[1].split("\t")[2] == "1.000"
    assert rows[1].split("\t")[3] == rows[2].split("\t")[3]
    assert (tmp_path / "s.png").stat().st_size > 0
    with pytest.raises(SystemExit):
        main(["bench-scale", str(cfg), "--workers", "0"])
