import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import tiny_train_config
from microdualnet.data import ClipDataset
from microdualnet.train import (TrainingAborted, evaluate, evaluate_model, load_model, run_ablation, save_model,
                                train)


def test_same_seed_runs_are_bit_identical(tiny_dataset):
    cfg = tiny_train_config(tiny_dataset)
    a, b = train(cfg), train(cfg)
    assert a.final_loss == b.final_loss
    for (na, pa), (nb, pb) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_different_seeds_differ(tiny_dataset):
    a = train(tiny_train_config(tiny_dataset, seed=0))
    b = train(tiny_train_config(tiny_dataset, seed=1))
    assert a.final_loss != b.final_loss


def test_run_directory_artifacts(tiny_dataset, tmp_path):
    res = train(tiny_train_config(tiny_dataset), tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrics.jsonl", "routing.csv", "report.json", "report.csv", "config.json", "checkpoints"} <= names
    assert (tmp_path / "checkpoints" / "epoch_001.ckpt").is_file() and res.best_checkpoint.is_file()
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "val_top1" in json.loads(lines[0])
    routing = (tmp_path / "routing.csv").read_text().splitlines()
    assert routing[0] == "epoch,entity_name,mean_alpha_st,mean_alpha_ts" and len(routing) == 1 + 2 * 6


def test_checkpoint_round_trip_reproduces_metrics(tiny_dataset, tmp_path):
    res = train(tiny_train_config(tiny_dataset))
    test = ClipDataset(tiny_dataset, "val", frames=4)
    direct = evaluate_model(res.model, test)
    save_model(tmp_path / "m.ckpt", res.model)
    again = evaluate(tmp_path / "m.ckpt", "val", tiny_dataset, frames=4)
    assert direct.to_dict() == again.to_dict()
    assert evaluate(tmp_path / "m.ckpt", "val", tiny_dataset, frames=4).to_dict() == again.to_dict()


def test_class_count_mismatch(tiny_dataset, tmp_path):
    res = train(tiny_train_config(tiny_dataset, epochs=1))
    model = load_model(save_model(tmp_path / "m.ckpt", res.model))
    ds = ClipDataset(tiny_dataset, "val", frames=4)
    ds.num_classes = 5
    with pytest.raises(ValueError, match="classes"):
        evaluate_model(model, ds)


def test_non_finite_input_aborts_with_batch_ids(tiny_dataset, tmp_path):
    ds = ClipDataset(tiny_dataset, "train", frames=4)
    ds.clips[0] = ds.clips[0].copy()
    ds.clips[0][0, 0, 0, 0] = np.inf
    val = ClipDataset(tiny_dataset, "val", frames=4)
    with pytest.raises(TrainingAborted, match=ds.rows[0].sample_id):
        train(tiny_train_config(tiny_dataset, batch_size=32), tmp_path, datasets={"train": ds, "val": val})
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert ds.rows[0].sample_id in dump["batch_ids"]


def test_ablation_sweep_writes_lattice_csv(tiny_dataset, tmp_path):
    cfg = tiny_train_config(tiny_dataset, epochs=1, keep_epoch_checkpoints=False)
    rows, failures = run_ablation(cfg, tmp_path, seeds=(0,), split="val")
    assert not failures
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["config", "sem"] and len(lines) == 9
    assert all(r["status"] == "ok" for r in rows)


def test_ablation_records_failures_and_continues(tiny_dataset, tmp_path):
    cfg = tiny_train_config(tiny_dataset, epochs=1)
    cfg = replace(cfg, model=replace(cfg.model, heads=3))  # dim 8 is not divisible by 3
    rows, failures = run_ablation(cfg, tmp_path, names=["baseline", "full"], seeds=(0,), split="val")
    assert [r["status"] for r in rows][0] == "ok" and len(failures) == 1
