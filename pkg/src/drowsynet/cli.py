"""Command-line entry point: generate, preprocess, pretrain, train, eval, predict.

Every verb prints one JSON document on stdout.  Failures print a single JSON
line on stderr (``{"error": kind, "message": ..., "key": ...}``) and exit
with 2 for usage/config problems or 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, apply_settings, dump_config, load_config
from .geometry import AnnotationError
from .model import init_subnet
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline import DataError, cache_dir, load_split, load_video_clips, preprocess_dataset
from .plotting import ablation_figure, confusion_figure, learning_curves
from .sampling import FEATURES, TAXONOMY
from .synth import make_benchmark
from .training import (confusion_matrix, predict_drowsy, pretrain_subnet, summarize, train_fusion,
                       trunk_only, write_metrics)

log = logging.getLogger("drowsynet")

ABLATION_VARIANTS = {
    "full": {},
    "no-flow": {"flow": "false"},
    "face-only": {"face_only": "true"},
}


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------

def _workers(n: int) -> int:
    return n if n > 0 else min(4, os.cpu_count() or 1)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_stage_metrics(run: Path, stage: str, records) -> None:
    """One CSV per split so each file has exactly one row per epoch."""
    for split in ("train", "val"):
        suffix = "" if split == "train" else "_val"
        write_metrics(run / f"{stage}_metrics{suffix}.csv", [r for r in records if r.split == split])
    if records:
        learning_curves(records, run / f"{stage}_curves.png", stage)


def _record_time(run: Path, stage: str, seconds: float) -> None:
    path = run / "timings.json"
    t = json.loads(path.read_text()) if path.exists() else {}
    t[stage] = round(seconds, 3)
    _write_json(path, t)


def _epoch_logger(stage: str):
    def emit(train, val):
        log.info("%s epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 stage, train.epoch, train.loss, train.accuracy, val.loss, val.accuracy)
    return emit


def _model_path(cfg: PipelineConfig, checkpoint: str | None) -> Path:
    path = Path(checkpoint) if checkpoint else cfg.run_dir() / "model.ckpt"
    if not path.exists():
        raise DataError(f"no checkpoint at {path}; run `train` first")
    return path


# -- verbs --------------------------------------------------------------------------

def cmd_generate(cfg: PipelineConfig, force: bool = False) -> dict:
    root = Path(cfg.dataset_root)
    if (root / "manifest.csv").exists():
        if not force:
            raise UsageError(f"dataset already exists at {root}; pass --force to regenerate")
        shutil.rmtree(root)
    elif root.exists() and any(root.iterdir()):
        raise UsageError(f"{root} is not empty and holds no manifest.csv; refusing to write into it")
    t0 = time.perf_counter()
    m = make_benchmark(root, cfg.n_clips, cfg.balance, cfg.data_seed, cfg.frames_per_video,
                       cfg.frame_width, cfg.frame_height)
    splits = {s: sum(1 for r in m.rows if r[1] == s) for s in ("train", "val", "test")}
    return {"root": str(root), "clips": len(m.rows), "drowsy": sum(r[2] for r in m.rows),
            "splits": splits, "seconds": round(time.perf_counter() - t0, 3)}


def cmd_preprocess(cfg: PipelineConfig, force: bool = False, workers: int = 0) -> dict:
    if force and cache_dir(cfg).exists():
        shutil.rmtree(cache_dir(cfg))
    t0 = time.perf_counter()
    _, stats = preprocess_dataset(cfg, _workers(workers))
    return {"cache": str(cache_dir(cfg)), "clips": stats.clips, "hits": stats.hits,
            "hit_rate": stats.hit_rate, "seconds": round(time.perf_counter() - t0, 3)}


def cmd_pretrain(cfg: PipelineConfig, feature: str, workers: int = 0) -> dict:
    if feature not in FEATURES:
        raise UsageError(f"feature must be one of {', '.join(FEATURES)}")
    out = cfg.pretrain_dir(feature)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train = load_split(cfg, "train", _workers(workers))
    val = load_split(cfg, "val", _workers(workers))
    params, records = pretrain_subnet(train, cfg.subnets[feature], cfg.optim(cfg.pretrain_epochs), val,
                                      cfg.flow, _epoch_logger(f"pretrain {feature}"))
    save_checkpoint(out / "pretrain.ckpt", params)
    _write_stage_metrics(out, "pretrain", records)
    seconds = time.perf_counter() - t0
    _record_time(out, "pretrain", seconds)
    last = [r for r in records if r.split == "val"][-1:] or [None]
    return {"feature": feature, "checkpoint": str(out / "pretrain.ckpt"),
            "epochs": cfg.pretrain_epochs, "val_accuracy": last[0].accuracy if last[0] else None,
            "seconds": round(seconds, 3)}


def _trunks(cfg: PipelineConfig, workers: int, force: bool) -> dict[str, np.ndarray]:
    """Pretrained trunks (reusing any matching earlier pretraining) or fresh ones."""
    trunks: dict[str, np.ndarray] = {}
    for f in cfg.features:
        if cfg.pretrain:
            path = cfg.pretrain_dir(f) / "pretrain.ckpt"
            if force or not path.exists():
                cmd_pretrain(cfg, f, workers)
            trunks.update(trunk_only(load_checkpoint(path)))
        else:
            rng = np.random.default_rng([cfg.seed, 17, len(f)])
            trunks.update(init_subnet(cfg.subnets[f], rng, with_head=False))
    return trunks


def cmd_train(cfg: PipelineConfig, force: bool = False, workers: int = 0) -> dict:
    """Fusion training; pretrains any sub-network whose checkpoint is missing first."""
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(dump_config(cfg))
    t0 = time.perf_counter()
    trunks = _trunks(cfg, workers, force)
    t1 = time.perf_counter()
    train = load_split(cfg, "train", _workers(workers))
    val = load_split(cfg, "val", _workers(workers))
    params, records = train_fusion(train, trunks, cfg.model_config(), cfg.optim(), cfg.freeze, val,
                                   cfg.flow, _epoch_logger("fusion"))
    save_checkpoint(run / "model.ckpt", params)
    _write_stage_metrics(run, "fusion", records)
    _record_time(run, "fusion", time.perf_counter() - t1)
    seconds = time.perf_counter() - t0
    last = [r for r in records if r.split == "val"][-1:] or [None]
    return {"run": str(run), "checkpoint": str(run / "model.ckpt"), "epochs": cfg.epochs,
            "val_accuracy": last[0].accuracy if last[0] else None, "seconds": round(seconds, 3)}


def evaluate(cfg: PipelineConfig, split: str, checkpoint: str | None = None, workers: int = 0) -> dict:
    params = load_checkpoint(_model_path(cfg, checkpoint))
    samples = load_split(cfg, split, _workers(workers))
    if not samples:
        raise DataError(f"split {split!r} has no clips")
    p = predict_drowsy(samples, cfg.model_config(), params, cfg.flow)
    labels = np.array([s.labels["drowsy"] for s in samples], dtype=np.int64)
    probs = np.stack([1.0 - p, p], axis=1)
    loss, acc, recall = summarize(probs, labels, 2)
    cm = confusion_matrix((p >= 0.5).astype(np.int64), labels, 2)
    return {"split": split, "variant": cfg.variant(), "clips": len(samples), "accuracy": acc, "loss": loss,
            "recall": {name: r for name, r in zip(TAXONOMY["drowsy"], recall)},
            "confusion_matrix": cm.tolist(), "classes": list(TAXONOMY["drowsy"])}


def cmd_eval(cfg: PipelineConfig, split: str, checkpoint: str | None = None, workers: int = 0) -> dict:
    report = evaluate(cfg, split, checkpoint, workers)
    run = cfg.run_dir()
    _write_json(run / f"eval_{split}.json", report)
    confusion_figure(np.array(report["confusion_matrix"]), report["classes"], run / f"eval_{split}_confusion.png",
                     f"{split}: accuracy {report['accuracy']:.3f}")
    return report


def cmd_ablation(cfg: PipelineConfig, split: str, seeds: list[int], workers: int = 0) -> dict:
    """Train (where missing) and evaluate every ablation variant for every seed."""
    acc: dict[str, list[float]] = {}
    for name, overrides in ABLATION_VARIANTS.items():
        acc[name] = []
        for seed in seeds:
            v = apply_settings(copy.deepcopy(cfg), dict(overrides, seed=str(seed))).validate()
            if not (v.run_dir() / "model.ckpt").exists():
                cmd_train(v, workers=workers)
            acc[name].append(evaluate(v, split, None, workers)["accuracy"])
    means = {k: float(np.mean(v)) for k, v in acc.items()}
    report = {
        "split": split, "seeds": seeds, "accuracy": acc, "mean": means,
        "with_flow_ge_no_flow": means["full"] >= means["no-flow"],
        "multi_ge_face_only": means["full"] >= means["face-only"],
    }
    out = Path(cfg.work_dir) / "reports"
    _write_json(out / f"ablation_{split}.json", report)
    with open(out / f"ablation_{split}.csv", "w") as fh:
        fh.write("variant,seed,accuracy\n")
        for name, vals in acc.items():
            for seed, a in zip(seeds, vals):
                fh.write(f"{name},{seed},{a:.6f}\n")
    ablation_figure(acc, out / f"ablation_{split}.png", f"{split} accuracy over {len(seeds)} seeds")
    return report


def cmd_predict(cfg: PipelineConfig, video_dir: str, checkpoint: str | None = None) -> dict:
    vdir = Path(video_dir)
    if not vdir.is_dir():
        raise DataError(f"no video directory at {vdir}")
    params = load_checkpoint(_model_path(cfg, checkpoint))
    clips = load_video_clips(vdir, cfg)
    if not clips:
        raise DataError(f"{vdir} is shorter than one {cfg.scheme} window ({cfg.clip_spec.span} frames)")
    p = predict_drowsy(clips, cfg.model_config(), params, cfg.flow)
    names = TAXONOMY["drowsy"]
    verdicts = [{"window_start": c.start, "p_drowsy": float(q), "label": names[int(q >= 0.5)]}
                for c, q in zip(clips, p)]
    return {"video": vdir.name, "windows": verdicts}


# -- argument handling -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    g.add_argument("--seed", type=int, help="training seed")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")
    g.add_argument("--workers", type=int, default=0, help="preprocessing processes (0: up to 4)")
    g.add_argument("-v", "--verbose", action="store_true")
    a = p.add_argument_group("ablation flags")
    a.add_argument("--no-clahe", action="store_true")
    a.add_argument("--no-flow", action="store_true")
    a.add_argument("--face-only", action="store_true")
    a.add_argument("--no-pretrain", action="store_true")
    a.add_argument("--scheme", choices=["10x10", "3x30"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="drowsynet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write the synthetic benchmark")
    sub.add_parser("preprocess", parents=[common], help="build the clip-tensor cache")
    p = sub.add_parser("pretrain", parents=[common], help="pretrain one sub-network on its own labels")
    p.add_argument("--feature", required=True, choices=FEATURES)
    sub.add_parser("train", parents=[common], help="train the fused drowsiness model")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--checkpoint")
    p.add_argument("--ablation", action="store_true", help="report full / no-flow / face-only over --seeds")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds for --ablation")
    p = sub.add_parser("predict", parents=[common], help="per-window verdicts for one video directory")
    p.add_argument("video_dir")
    p.add_argument("--checkpoint")
    return parser


def config_from_args(args) -> PipelineConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", item)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    flags = {"no_clahe": ("clahe", "false"), "no_flow": ("flow", "false"),
             "face_only": ("face_only", "true"), "no_pretrain": ("pretrain", "false")}
    for attr, (key, value) in flags.items():
        if getattr(args, attr):
            overrides[key] = value
    if args.scheme:
        overrides["scheme"] = args.scheme
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}", "config")
    return load_config(args.config, overrides)


def run(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    cfg = config_from_args(args)
    if args.verb == "generate":
        return cmd_generate(cfg, args.force)
    if args.verb == "preprocess":
        return cmd_preprocess(cfg, args.force, args.workers)
    if args.verb == "pretrain":
        return cmd_pretrain(cfg, args.feature, args.workers)
    if args.verb == "train":
        return cmd_train(cfg, args.force, args.workers)
    if args.verb == "eval":
        if args.ablation:
            try:
                seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            except ValueError:
                raise UsageError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
            return cmd_ablation(cfg, args.split, seeds, args.workers)
        return cmd_eval(cfg, args.split, args.checkpoint, args.workers)
    return cmd_predict(cfg, args.video_dir, args.checkpoint)


def _fail(kind: str, message: str, code: int, key: str | None = None) -> int:
    err = {"error": kind, "message": " ".join(str(message).split())}
    if key:
        err["key"] = key
    print(json.dumps(err), file=sys.stderr)
    return code


def _clean(obj):
    """NaN is not valid JSON; emit null instead."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def main(argv=None) -> int:
    try:
        result = run(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except ConfigError as exc:
        return _fail("config", str(exc), 2, exc.key)
    except (DataError, AnnotationError, CheckpointError, OSError, ValueError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", 1)
    except KeyboardInterrupt:
        return _fail("runtime", "interrupted", 1)
    print(json.dumps(_clean(result), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
