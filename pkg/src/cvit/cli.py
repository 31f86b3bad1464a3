"""Command-line entry point: ``cvit train|eval|predict|synth``.

Exit codes: 0 success, 1 training aborted on a non-finite loss, 2 bad
configuration, 3 data problem, 4 checkpoint problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, synthetic
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import load_config
from .errors import CheckpointError, ConfigurationError, DataError
from .model import count_parameters, init_parameters
from .train import (
    MAX_VIDEO_FRAMES, TrainingAborted, classify_video, evaluate, train, write_history_csv, write_roc_csv,
)

logger = logging.getLogger("cvit")

EXIT_OK, EXIT_ABORTED, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_train(args) -> int:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output is not None:
        overrides["output_dir"] = args.output
    if args.data is not None:
        overrides["dataset_root"] = args.data
    cfg = load_config(args.config, overrides)
    if not cfg.dataset_root or not Path(cfg.dataset_root).is_dir():
        raise DataError(f"dataset_root {cfg.dataset_root!r} is not a directory")
    model_cfg = cfg.model_config()
    samples = data.ingest(cfg.dataset_root, model_cfg.image_size)
    manifest = data.split(samples, cfg.ratios, seed=cfg.seed)
    if not manifest.train or not manifest.val:
        raise DataError("train or validation split is empty after balancing")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data.write_manifest(manifest, out / "manifest.tsv")
    if cfg.offline_augment:
        manifest.train = data.expand_offline(manifest.train, cfg.augmentation(), seed=cfg.seed)

    model = init_parameters(model_cfg, seed=cfg.seed)
    counts = count_parameters(model)
    logger.info("model parameters: fl %d, vit %d, total %d", counts["fl"], counts["vit"], counts["total"])
    try:
        result = train(model, manifest, cfg.schedule(), seed=cfg.seed, batch_size=cfg.batch_size,
                       policy=cfg.augmentation(), weight_decay=cfg.weight_decay, workers=cfg.workers)
    except TrainingAborted as exc:
        write_history_csv(exc.history, out / "history.csv")
        save_checkpoint(model, out / "last.ckpt", state=exc.last_good, epoch=len(exc.history) - 1)
        logger.error("training aborted: %s; last good state saved", exc)
        return EXIT_ABORTED
    write_history_csv(result.history, out / "history.csv")
    last_epoch = len(result.history) - 1 if result.history else None
    save_checkpoint(model, out / "last.ckpt", optimizer=result.optimizer, epoch=last_epoch,
                    metrics=result.history[-1] if result.history else None)
    save_checkpoint(model, out / "best.ckpt", epoch=result.best_epoch, metrics=result.best_metrics,
                    state=result.best_state)
    print(f"trained {len(result.history)} epoch(s); best epoch {result.best_epoch}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    entries = data.read_manifest(args.manifest)[args.split]
    if not entries:
        raise DataError(f"split {args.split!r} is empty in {args.manifest}")
    samples = data.load_split(args.data, entries, ckpt.config.image_size)
    report = evaluate(model, samples)
    out = Path(args.output) if args.output else Path(args.checkpoint).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    (out / f"eval_{args.split}_metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_roc_csv(report, out / f"eval_{args.split}_roc.csv")
    auc = "absent" if report.auc is None else f"{report.auc:.6f}"
    print(f"split={args.split} frames={summary['frames']} accuracy={report.accuracy:.6f} "
          f"log_loss={report.log_loss:.6f} auc={auc}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise DataError(f"{frames_dir} is not a directory")
    images = []
    for path in data.list_frames(frames_dir):
        if len(images) == args.max_frames:
            break
        try:
            images.append(data.load_image(path, ckpt.config.image_size))
        except DataError as exc:
            logger.warning("%s", exc)
    if not images:
        raise DataError(f"no decodable frames in {frames_dir}")
    verdict = classify_video(model, np.stack(images), video_id=frames_dir.name, max_frames=args.max_frames)
    print(f"{verdict.video_id}, {verdict.aggregate:.6f}, {verdict.label_out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    n = synthetic.write_dataset(args.output, args.videos, args.frames, args.size, args.seed)
    print(f"wrote {n} frames under {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvit", description="Convolutional vision transformer deepfake classifier")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="ingest, split and train")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--output")
    t.add_argument("--data", help="dataset root, overrides dataset_root")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics for one manifest split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", choices=data.SPLITS, required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--output", help="directory for metrics/ROC files (default: checkpoint directory)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="verdict for one directory of face frames")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--frames", required=True)
    r.add_argument("--max-frames", type=int, default=MAX_VIDEO_FRAMES)
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="write a synthetic two-class texture dataset")
    s.add_argument("--output", required=True)
    s.add_argument("--videos", type=int, default=10, help="videos per class")
    s.add_argument("--frames", type=int, default=5, help="frames per video")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "max_frames", 1) < 1:
        print("error: --max-frames must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
