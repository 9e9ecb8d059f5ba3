"""Training loop, checkpoints, evaluation and the ablation lattice."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import TrainConfig
from .data import ClipDataset, DatasetError
from .metrics import MetricsReport, compute_report
from .model import MicroDualNet, ModelConfig
from .optim import OptimState, lr_at, sgd_step
from .routing import routing_statistics

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: MicroDualNet
    history: List[dict]
    best_checkpoint: Optional[Path]
    last_checkpoint: Optional[Path]
    final_loss: float
    out_dir: Optional[Path] = None
    train_report: Optional[MetricsReport] = None


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def save_model(path, model: MicroDualNet, extra: Optional[dict] = None) -> Path:
    """Weights in the binary checkpoint format plus a JSON sidecar holding the model config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(path, model.state_dict())
    meta = {"model": model.cfg.to_dict(), **(extra or {})}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_model(path) -> MicroDualNet:
    path = Path(path)
    side = Path(str(path) + ".json")
    if not path.is_file() or not side.is_file():
        raise FileNotFoundError(f"checkpoint or its config sidecar missing: {path}")
    meta = json.loads(side.read_text())
    model = MicroDualNet(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(checkpoint.load(path))
    return model.eval()


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def predict(model: MicroDualNet, ds: ClipDataset, batch_size: int = 16) -> tuple:
    """Eval-mode logits over a whole dataset (centre crop, no flip) and mean cross entropy."""
    was_training = model.training
    model.eval()
    logits, losses = [], []
    with T.no_grad():
        for s in range(0, len(ds), batch_size):
            batch = ds.batch(range(s, min(len(ds), s + batch_size)))
            out = model(batch)
            logits.append(out.logits.data.astype(np.float64))
            losses.append(model.loss(batch, out).ce * len(batch.ids))
    model.train(was_training)
    if not logits:
        return np.zeros((0, model.cfg.num_classes)), float("nan")
    return np.concatenate(logits), float(np.sum(losses) / len(ds))


def evaluate_model(model: MicroDualNet, ds: ClipDataset, batch_size: int = 16) -> MetricsReport:
    if ds.num_classes != model.cfg.num_classes:
        raise ValueError(f"dataset has {ds.num_classes} classes but the model predicts {model.cfg.num_classes}")
    logits, loss = predict(model, ds, batch_size)
    body = np.array([r.body_label for r in ds.rows], dtype=np.int64)
    rep = compute_report(logits, ds.labels, ds.action_to_body, body)
    rep.loss = loss
    return rep


def evaluate(checkpoint_path, split: str, data_root, frames: int = 8, frame_stride: int = 1) -> MetricsReport:
    model = load_model(checkpoint_path)
    ds = ClipDataset(data_root, split, model.cfg.entity_set, frames, frame_stride)
    if len(ds) == 0:
        raise DatasetError(f"split {split!r} is empty")
    return evaluate_model(model, ds)


def class_accuracy(report: MetricsReport) -> np.ndarray:
    """Per-class recall (percent) from the confusion matrix."""
    cm = report.confusion.astype(np.float64)
    tot = cm.sum(axis=1)
    return 100.0 * np.where(tot > 0, np.diag(cm) / np.where(tot > 0, tot, 1.0), np.nan)


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

def _dump_diagnostics(out_dir: Optional[Path], info: dict) -> None:
    if out_dir is None:
        return
    (out_dir / "nan_dump.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")


def train(cfg: TrainConfig, out_dir=None, train_split: str = "train", val_split: str = "val",
          datasets: Optional[Dict[str, ClipDataset]] = None) -> TrainResult:
    """Optimise the full objective; deterministic for a fixed ``cfg.seed``.

    ``datasets`` lets callers reuse already-loaded splits.  With ``out_dir``
    the run writes checkpoints, ``metrics.jsonl``, ``routing.csv`` and a final
    report there.
    """
    out = Path(out_dir) if out_dir is not None else None
    datasets = dict(datasets or {})
    for split in (train_split, val_split):
        if split not in datasets:
            datasets[split] = ClipDataset(cfg.data_root, split, cfg.model.entity_set, cfg.frames, cfg.frame_stride)
    ds, val = datasets[train_split], datasets[val_split]
    if len(ds) == 0:
        raise DatasetError(f"training split {train_split!r} is empty")
    mcfg = replace(cfg.model, num_classes=ds.num_classes)
    T.set_default_dtype(np.float32)
    T.manual_seed(cfg.seed)
    model = MicroDualNet(mcfg, seed=cfg.seed).train()
    params = model.parameters()
    state = OptimState(cfg.base_lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    steps = math.ceil(len(ds) / cfg.batch_size)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")
        (out / "routing.csv").write_text("epoch,entity_name,mean_alpha_st,mean_alpha_ts\n")
    history: List[dict] = []
    best_score, best_path, last_path = -math.inf, None, None
    final_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(ds))
        sums = {"ce": 0.0, "mac": 0.0, "total": 0.0}
        correct = 0
        alpha_sum = np.zeros((model.num_entities, 2))
        alpha_cnt = np.zeros((model.num_entities, 1))
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            state.lr = lr_at(epoch + step / steps, cfg.epochs, cfg.base_lr, cfg.warmup_epochs, cfg.warmup_start)
            batch = ds.batch(idx, rng, flip=cfg.flip, jitter=cfg.temporal_jitter)
            model.zero_grad()
            try:
                out_m = model(batch)
                rep = model.loss(batch, out_m)
                if not math.isfinite(rep.total):
                    raise T.NonFiniteError(f"loss is {rep.total}")
                T.backward(rep.loss)
                sgd_step(params, state)
            except T.NonFiniteError as e:
                info = {"epoch": epoch, "step": step, "batch_ids": batch.ids, "lr": state.lr, "error": str(e)}
                _dump_diagnostics(out, info)
                raise TrainingAborted(f"non-finite value at epoch {epoch} step {step}, batch {batch.ids}: {e}") from e
            n = len(idx)
            for key in sums:
                sums[key] += getattr(rep, key) * n
            correct += int((np.argmax(out_m.logits.data, axis=1) == batch.labels).sum())
            if rep.alpha is not None:
                m = out_m.mask[..., None].astype(np.float64)
                alpha_sum += (rep.alpha * m).reshape(-1, model.num_entities, 2).sum(axis=0)
                alpha_cnt += m.reshape(-1, model.num_entities, 1).sum(axis=0)
        record = {"epoch": epoch, "lr": lr_at(epoch + 1, cfg.epochs, cfg.base_lr, cfg.warmup_epochs, cfg.warmup_start),
                  **{f"train_{k}": v / len(ds) for k, v in sums.items()},
                  "train_running_top1": 100.0 * correct / len(ds)}
        final_loss = sums["total"] / len(ds)
        score = -final_loss
        if len(val):
            vrep = evaluate_model(model, val)
            record.update(val_top1=vrep.top1, val_f1_mean=vrep.f1_mean, val_loss=vrep.loss)
            score = vrep.top1 - 1e-6 * vrep.loss
        history.append(record)
        log.info("epoch %d %s", epoch, json.dumps(record, sort_keys=True))
        if out is not None:
            with (out / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if alpha_cnt.sum() > 0:
                stats = np.where(alpha_cnt > 0, alpha_sum / np.maximum(alpha_cnt, 1), np.nan)
                with (out / "routing.csv").open("a", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    for d, (a_st, a_ts) in zip(model.defs, stats):
                        w.writerow([epoch, d.name, f"{a_st:.6f}", f"{a_ts:.6f}"])
            extra = {"epoch": epoch, "seed": cfg.seed}
            ckdir = out / "checkpoints"
            last_path = save_model(ckdir / (f"epoch_{epoch:03d}.ckpt" if cfg.keep_epoch_checkpoints else "last.ckpt"),
                                   model, extra)
            if score > best_score:
                best_score = score
                best_path = save_model(ckdir / "best.ckpt", model, extra)
    result = TrainResult(model.eval(), history, best_path, last_path, final_loss, out)
    if out is not None:
        final = evaluate_model(model, val) if len(val) else evaluate_model(model, ds)
        write_report(out / "report", final)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return result


def write_report(stem, report: MetricsReport) -> None:
    """``<stem>.json`` with the full report and ``<stem>.csv`` with one row of headline numbers."""
    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    levels = report.levels
    cols = ["top1", "top5", "f1_mean"] + [f"{lvl}_{k}" for lvl in sorted(levels) for k in sorted(levels[lvl])]
    vals = [report.top1, report.top5, report.f1_mean] + [levels[lvl][k] for lvl in sorted(levels)
                                                        for k in sorted(levels[lvl])]
    stem.with_suffix(".csv").write_text(",".join(cols) + "\n" + ",".join(f"{v:.6f}" for v in vals) + "\n")


# ----------------------------------------------------------------------------
# ablation lattice
# ----------------------------------------------------------------------------

_OFF = dict(st_only=False, ts_only=False, no_mac=False, no_routing=False, no_entities=False, fixed_regions=False)

ABLATIONS: Dict[str, dict] = {
    "baseline": {**_OFF, "no_entities": True},
    "ts_only": {**_OFF, "ts_only": True, "fixed_regions": True},
    "st_only": {**_OFF, "st_only": True},
    "+sem": {**_OFF, "ts_only": True},
    "+dual": {**_OFF, "no_mac": True, "no_routing": True},
    "+mac": {**_OFF, "no_routing": True},
    "+routing-mac": {**_OFF, "no_mac": True},
    "full": dict(_OFF),
}

ABLATION_COLUMNS = ["config", "sem", "dual_path", "mac", "routing", "seed", "top1", "top5", "f1_mean", "status"]


def ablation_components(name: str) -> dict:
    m = ModelConfig(**{k: v for k, v in ABLATIONS[name].items()})
    entities = not m.no_entities
    return {"sem": entities and not m.fixed_regions, "dual_path": m.dual, "mac": m.uses_mac,
            "routing": m.dual and not m.no_routing}


def run_ablation(cfg: TrainConfig, out_dir, names: Sequence[str] = tuple(ABLATIONS), seeds: Sequence[int] = (0,),
                 split: str = "test") -> tuple:
    """Train and score every lattice entry; returns (rows, failures). Failures do not stop the sweep."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache: Dict[str, ClipDataset] = {}
    rows, failures = [], []
    for name in names:
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, model=replace(cfg.model, **ABLATIONS[name]))
            safe = name.replace("+", "plus_").replace("-", "_minus_")
            row = {"config": name, **ablation_components(name), "seed": seed}
            try:
                for s in ("train", "val", split):
                    if s not in cache:
                        cache[s] = ClipDataset(cfg.data_root, s, cfg.model.entity_set, cfg.frames, cfg.frame_stride)
                if len(cache[split]) == 0:
                    raise DatasetError(f"split {split!r} is empty")
                res = train(run_cfg, out / f"{safe}_seed{seed}", datasets=cache)
                rep = evaluate_model(res.model, cache[split])
                row.update(top1=rep.top1, top5=rep.top5, f1_mean=rep.f1_mean, status="ok")
            except Exception as e:  # the lattice keeps going; the failure is reported
                log.error("ablation %s seed %d failed: %s", name, seed, e)
                failures.append((name, seed, str(e)))
                row.update(top1=float("nan"), top5=float("nan"), f1_mean=float("nan"), status=f"failed: {e}")
            rows.append(row)
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    return rows, failures
