"""Command-line entry point.

Exit codes: 0 success, 1 I/O problem, 2 invalid configuration or input,
3 partial failure of an ablation sweep.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, TrainConfig, load_config, parse_config, render_config
from .data import DatasetError
from .hurdle import HurdleInputError, format_results_csv, read_engagement_csv, run_hurdle
from .pose import KeypointFormatError, default_entity_defs, load_keypoints, track_entity_boxes
from .synth import GenConfig, gen_dataset

log = logging.getLogger("microdualnet")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2, 3
ENTITY_COLUMNS = ["frame", "entity", "x_min", "y_min", "x_max", "y_max", "source", "conf"]


def _overrides(pairs: Optional[List[str]]) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _train_config(args) -> TrainConfig:
    ov = _overrides(args.set)
    if args.data is not None:
        ov["data.root"] = args.data
    ov["run.seed"] = str(args.seed)
    cfg = load_config(args.config, ov) if args.config else parse_config("", ov)
    if not cfg.data_root:
        raise ConfigError("no dataset given: pass --data or set [data] root")
    return cfg


def cmd_gen_synth(args) -> int:
    if args.per_class < 1:
        raise ConfigError(f"--per-class must be positive, got {args.per_class}")
    if args.canvas % 8:
        raise ConfigError(f"--canvas must be divisible by 8, got {args.canvas}")
    cfg = GenConfig(canvas=args.canvas, n_frames=args.frames)
    gen_dataset(args.out, args.per_class, seed=args.seed, noise=args.noise, cfg=cfg, frame_format=args.format,
                require_both_kinds=True)
    log.info("wrote dataset to %s", args.out)
    return EXIT_OK


def cmd_extract_entities(args) -> int:
    src = Path(args.keypoints)
    if not src.exists():
        raise FileNotFoundError(f"keypoint file not found: {src}")
    skeletons = load_keypoints(src)
    defs = default_entity_defs(args.entity_set)
    size = (args.width, args.height) if args.width and args.height else None
    track = track_entity_boxes(skeletons, defs, args.theta, image_size=size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "entities.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENTITY_COLUMNS)
        for t, row in enumerate(track):
            for d, b in zip(defs, row):
                w.writerow([t, d.name, f"{b.x_min:.4f}", f"{b.y_min:.4f}", f"{b.x_max:.4f}", f"{b.y_max:.4f}",
                            b.source, f"{b.confidence:.6f}"])
    log.info("wrote %d rows to %s", len(track) * len(defs), path)
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(render_config(cfg))
    res = train(cfg, out)
    log.info("finished %d epochs; best checkpoint %s", cfg.epochs, res.best_checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate, write_report

    ck = Path(args.checkpoint)
    if not ck.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ck}")
    rep = evaluate(ck, args.split, args.data, args.frames, args.frame_stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report", rep)
    log.info("top1 %.2f top5 %.2f f1_mean %.2f", rep.top1, rep.top5, rep.f1_mean)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train import ABLATIONS, run_ablation

    cfg = _train_config(args)
    names = args.configs.split(",") if args.configs else list(ABLATIONS)
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation config(s) {unknown}; choose from {list(ABLATIONS)}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    rows, failures = run_ablation(cfg, args.out, names, seeds, args.split)
    for name, seed, err in failures:
        log.error("%s (seed %d) failed: %s", name, seed, err)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_hurdle(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise FileNotFoundError(f"input not found: {src}")
    records, actions = read_engagement_csv(src)
    results, skipped = run_hurdle(records, actions, args.family)
    if args.only_significant:
        results = [r for r in results if r.p_adj <= args.alpha]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "hurdle.csv").write_text(format_results_csv(results))
    with (out / "skipped.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["action", "contrast", "type", "reason"])
        for s in skipped:
            w.writerow([s.action, s.contrast, s.part, s.reason])
            log.warning("skipped %s %s (%s): %s", s.action, s.contrast, s.part, s.reason)
    log.info("%d contrasts written, %d skipped", len(results), len(skipped))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microdualnet", description="Entity-aware dual-path micro-action recognition.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--out", required=True, help="output directory; nothing is written elsewhere")
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=fn)
        return sp

    g = add("gen-synth", cmd_gen_synth, "render the synthetic 8-class benchmark")
    g.add_argument("--per-class", type=int, default=40)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--canvas", type=int, default=96)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--format", choices=("mdnvid", "png"), default="mdnvid")

    e = add("extract-entities", cmd_extract_entities, "keypoints to per-frame entity boxes")
    e.add_argument("--keypoints", required=True, help="JSON-lines file or directory of per-frame JSON files")
    e.add_argument("--entity-set", default="ma52-like")
    e.add_argument("--theta", type=float, default=0.3, help="keypoint visibility threshold")
    e.add_argument("--width", type=int, default=0, help="clamp boxes to this image width")
    e.add_argument("--height", type=int, default=0)

    for name, fn, text in (("train", cmd_train, "train one model"),
                           ("ablate", cmd_ablate, "train the component-ablation lattice")):
        t = add(name, fn, text)
        t.add_argument("--config", help="INI run configuration")
        t.add_argument("--data", help="dataset directory (overrides [data] root)")
        t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        if name == "ablate":
            t.add_argument("--configs", help="comma-separated subset of the lattice")
            t.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
            t.add_argument("--split", default="test")

    v = add("eval", cmd_eval, "score a checkpoint on a split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--frames", type=int, default=8)
    v.add_argument("--frame-stride", type=int, default=1)

    h = add("hurdle", cmd_hurdle, "two-part engagement analysis with pairwise group contrasts")
    h.add_argument("--input", required=True, help="CSV: subject_id,group,<action>...")
    h.add_argument("--alpha", type=float, default=0.05)
    h.add_argument("--only-significant", action="store_true", help="keep rows with p_adj <= alpha")
    h.add_argument("--family", choices=("all", "action", "part", "action-part"), default="all",
                   help="grouping for the multiple-comparison adjustment")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed % 2**32)
    try:
        return args.func(args)
    except (ConfigError, HurdleInputError, KeypointFormatError) as e:
        log.error("%s", e)
        return EXIT_INVALID
    except (DatasetError, OSError) as e:
        log.error("%s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("%s", e)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
