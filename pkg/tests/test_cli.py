import csv
import json

import numpy as np
import pytest

from microdualnet.cli import main
from microdualnet.pose import FrameSkeleton, dump_keypoints


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0


@pytest.mark.parametrize("argv", [["bogus"], ["gen-synth"], ["hurdle", "--out", "x", "--alpha", "high"]])
def test_bad_flags_exit_two(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 2


def test_gen_synth_counts_and_determinism(tmp_path):
    args = ["gen-synth", "--per-class", "40", "--seed", "7", "--canvas", "16", "--frames", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    manifest = (tmp_path / "a" / "manifest.csv").read_bytes()
    assert manifest.count(b"\n") == 321 and manifest == (tmp_path / "b" / "manifest.csv").read_bytes()


def test_gen_synth_rejects_zero_per_class(tmp_path):
    assert main(["gen-synth", "--out", str(tmp_path), "--per-class", "0"]) == 2


def _write_track(path, n, occluded_from=None):
    frames = []
    for t in range(n):
        kp = np.column_stack([np.arange(25.0) + t, np.arange(25.0) * 2, np.full(25, 0.9)])
        if occluded_from is not None and t >= occluded_from:
            kp[:, 2] = 0.0
        frames.append(FrameSkeleton(kp))
    path.write_bytes(dump_keypoints(frames))


def test_extract_entities_rows(tmp_path):
    _write_track(tmp_path / "k.jsonl", 5, occluded_from=3)
    assert main(["extract-entities", "--keypoints", str(tmp_path / "k.jsonl"), "--out", str(tmp_path / "o")]) == 0
    with (tmp_path / "o" / "entities.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 6
    assert list(rows[0]) == ["frame", "entity", "x_min", "y_min", "x_max", "y_max", "source", "conf"]
    assert {r["source"] for r in rows if int(r["frame"]) < 3} == {"computed"}
    assert {r["source"] for r in rows if int(r["frame"]) >= 3} == {"carried-forward"}


def test_extract_entities_missing_file(tmp_path):
    assert main(["extract-entities", "--keypoints", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 1


def test_missing_config_exits_two(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2


def test_unknown_config_key_exits_two(tmp_path):
    (tmp_path / "r.cfg").write_text("[model]\nwidth = 3\n")
    assert main(["train", "--config", str(tmp_path / "r.cfg"), "--data", "x", "--out", str(tmp_path)]) == 2


def test_train_then_eval_twice(tiny_dataset, tmp_path):
    small = ["--set", "model.dim=8", "--set", "model.heads=2", "--set", "model.layers=1", "--set",
             "model.ffn_dim=16", "--set", "model.classifier_hidden=16,8", "--set", "model.backbone_channels=4,8,8,8",
             "--set", "schedule.epochs=1", "--set", "data.frames=4"]
    assert main(["train", "--data", str(tiny_dataset), "--out", str(tmp_path / "run"), *small]) == 0
    ck = tmp_path / "run" / "checkpoints" / "best.ckpt"
    for out in ("e1", "e2"):
        assert main(["eval", "--checkpoint", str(ck), "--data", str(tiny_dataset), "--frames", "4", "--split", "val",
                     "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "e1" / "report.json").read_bytes() == (tmp_path / "e2" / "report.json").read_bytes()


def test_eval_missing_checkpoint_exits_one(tiny_dataset, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--data", str(tiny_dataset),
                 "--out", str(tmp_path)]) == 1


def test_ablate_partial_failure_exits_three(tiny_dataset, tmp_path):
    argv = ["ablate", "--data", str(tiny_dataset), "--out", str(tmp_path), "--configs", "baseline,full", "--split", "val",
            "--set", "schedule.epochs=1", "--set", "data.frames=4", "--set", "model.dim=8", "--set", "model.heads=3",
            "--set", "model.backbone_channels=4,8,8,8", "--set", "model.classifier_hidden=8,8"]
    assert main(argv) == 3
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 3


def _engagement_csv(path, actions=10, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["subject_id,group," + ",".join(f"act{i}" for i in range(actions))]
    for g, p in (("ASD", 0.7), ("PSY", 0.5), ("TDC", 0.3)):
        for i in range(15):
            vals = [f"{rng.uniform(0.05, 0.9):.3f}" if rng.random() < p else "0" for _ in range(actions)]
            lines.append(f"{g}{i},{g}," + ",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def test_hurdle_table(tmp_path):
    _engagement_csv(tmp_path / "in.csv")
    assert main(["hurdle", "--input", str(tmp_path / "in.csv"), "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "hurdle.csv").read_text().splitlines()
    skipped = (tmp_path / "o" / "skipped.csv").read_text().splitlines()
    assert text[0] == "action,contrast,type,effect,p,p_adj"
    assert len(text) - 1 + len(skipped) - 1 == 60
    ps = [float(r.split(",")[4]) for r in text[1:]]
    assert ps == sorted(ps)


def test_hurdle_only_significant_filters(tmp_path):
    _engagement_csv(tmp_path / "in.csv")
    main(["hurdle", "--input", str(tmp_path / "in.csv"), "--out", str(tmp_path / "all")])
    main(["hurdle", "--input", str(tmp_path / "in.csv"), "--out", str(tmp_path / "sig"), "--alpha", "0.05",
          "--only-significant"])
    rows = list(csv.DictReader((tmp_path / "sig" / "hurdle.csv").open()))
    full = list(csv.DictReader((tmp_path / "all" / "hurdle.csv").open()))
    assert all(float(r["p_adj"]) <= 0.05 for r in rows) and len(rows) < len(full)


def test_hurdle_malformed_csv_exits_two(tmp_path, caplog):
    (tmp_path / "bad.csv").write_text("subject_id,group,a\ns1,A,0.5\ns2,A,x\n")
    assert main(["hurdle", "--input", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in caplog.text


def test_writes_stay_under_out(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _engagement_csv(tmp_path / "in.csv", actions=2)
    before = {p.name for p in tmp_path.iterdir()}
    main(["hurdle", "--input", "in.csv", "--out", "o"])
    assert {p.name for p in tmp_path.iterdir()} - before == {"o"}
