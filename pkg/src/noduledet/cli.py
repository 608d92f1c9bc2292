"""``noduledet`` command line: synth, split, train, detect, evaluate.

Exit codes: 0 success, 1 runtime I/O failure, 2 invalid input or flags,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import yaml
from threadpoolctl import threadpool_limits

from .data import (
    MANIFEST_NAME,
    AnnotationError,
    ManifestError,
    list_image_ids,
    load_sample,
    read_manifest,
    split_dataset,
    synth_generate,
    write_manifest,
)
from .data.dataset import IMAGE_SUFFIXES, read_image
from .data.letterbox import Sample
from .detector import ModelSpec, SpecError, build_model, load_config, load_detector, spec_from_config
from .detector.spec import SPEC_KEYS
from .evaluation import GATE, emit_report, evaluate_detector
from .nn.checkpoint import CheckpointError
from .postprocess import CONF_THRESHOLD, IOU_THRESHOLD, Thresholds, detect_batch, write_detections
from .training import TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_NAME = "config.yaml"
DESK_BATCH_SIZE = 8

log = logging.getLogger("noduledet")


class UsageError(Exception):
    """Bad input detected after argument parsing; maps to exit code 2."""


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default: 1, deterministic)")


def _config_flags(p: argparse.ArgumentParser) -> None:
    """Model and training overrides; unset flags fall back to --config, then to built-in defaults."""
    spec_defaults = ModelSpec()
    p.add_argument("--width-multiple", type=float, help=f"channel multiplier (default: {spec_defaults.width_multiple})")
    p.add_argument("--depth-multiple", type=float, help=f"depth multiplier (default: {spec_defaults.depth_multiple})")
    p.add_argument("--num-classes", type=int, help=f"number of classes (default: {spec_defaults.num_classes})")
    p.add_argument("--input-size", type=int, help=f"network input side in pixels (default: {spec_defaults.input_size})")
    train_defaults = TrainConfig()
    p.add_argument("--learning-rate", type=float, help=f"SGD learning rate (default: {train_defaults.learning_rate})")
    p.add_argument("--batch-size", type=int, help=f"images per step (default: {DESK_BATCH_SIZE})")
    p.add_argument("--epochs", type=int, help=f"training epochs (default: {train_defaults.epochs})")
    p.add_argument("--momentum", type=float, help=f"SGD momentum (default: {train_defaults.momentum})")
    p.add_argument("--weight-decay", type=float, help=f"L2 weight decay (default: {train_defaults.weight_decay})")
    p.add_argument("--box-weight", type=float, help=f"box loss weight (default: {train_defaults.box_weight})")
    p.add_argument("--obj-weight", type=float, help=f"objectness loss weight (default: {train_defaults.obj_weight})")
    p.add_argument("--cls-weight", type=float, help=f"class loss weight (default: {train_defaults.cls_weight})")
    p.add_argument("--seed", type=int, help=f"shuffle, augmentation and init seed (default: {train_defaults.seed})")
    p.add_argument("--no-augment", dest="augment", action="store_false", default=None,
                   help="disable flip/rotate/crop augmentation (default: augmentation on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noduledet", description="Lung-nodule detector: data, training and evaluation jobs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic radiograph dataset")
    p.add_argument("--count", type=int, default=250, help="number of images (default: 250)")
    p.add_argument("--positive-fraction", type=float, default=0.6, help="fraction of images with nodules (default: 0.6)")
    p.add_argument("--size", type=int, default=416, help="image side in pixels (default: 416)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--out", required=True, help="output dataset directory (required)")
    _add_threads(p)

    p = sub.add_parser("split", help="write train/val/test manifest for a dataset")
    p.add_argument("--data", required=True, help="dataset directory containing images/ (required)")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed (default: 0)")
    _add_threads(p)

    p = sub.add_parser("train", help="train a detector on the train split")
    p.add_argument("--data", required=True, help="dataset directory with manifest.txt (required)")
    p.add_argument("--config", help="YAML file of model/training keys (default: none)")
    p.add_argument("--out", required=True, help="run directory for train.log, checkpoints and config.yaml (required)")
    _config_flags(p)
    _add_threads(p)

    p = sub.add_parser("detect", help="detect nodules in a directory of images")
    p.add_argument("--checkpoint", required=True, help="NDCK checkpoint file (required)")
    p.add_argument("--images", required=True, help="directory of .png/.jpg images, or a dataset root with images/ (required)")
    p.add_argument("--out", required=True, help="detections text file to write (required)")
    p.add_argument("--config", help=f"model config (default: {CONFIG_NAME} next to the checkpoint)")
    p.add_argument("--conf", type=float, default=CONF_THRESHOLD, help=f"confidence gate (default: {CONF_THRESHOLD})")
    p.add_argument("--iou", type=float, default=IOU_THRESHOLD, help=f"NMS IoU threshold (default: {IOU_THRESHOLD})")
    _add_threads(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split of a dataset")
    p.add_argument("--checkpoint", required=True, help="NDCK checkpoint file (required)")
    p.add_argument("--data", required=True, help="dataset directory with manifest.txt (required)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"), help="manifest section (default: test)")
    p.add_argument("--limit", type=int, help="score only the first N images of the split (default: all)")
    p.add_argument("--out", required=True, help="directory for metrics.json, roc.csv, pr.csv (required)")
    p.add_argument("--config", help=f"model config (default: {CONFIG_NAME} next to the checkpoint)")
    p.add_argument("--gate", type=float, default=GATE, help=f"image-level decision threshold (default: {GATE})")
    p.add_argument("--iou", type=float, default=IOU_THRESHOLD, help=f"NMS IoU threshold (default: {IOU_THRESHOLD})")
    _add_threads(p)
    return parser


def _positive_int(value: int, flag: str) -> None:
    if value < 1:
        raise UsageError(f"{flag} must be >= 1, got {value}")


def _read_manifest(data: Path):
    path = data / MANIFEST_NAME
    if not path.exists():
        raise UsageError(f"{path} not found; run `noduledet split --data {data}` first")
    return read_manifest(path)


def _model_config(checkpoint: Path, config: str | None) -> ModelSpec:
    path = Path(config) if config else checkpoint.parent / CONFIG_NAME
    if path.exists():
        return spec_from_config(load_config(path))
    if config:
        raise UsageError(f"config file {path} not found")
    return ModelSpec()


def merged_config(args: argparse.Namespace) -> tuple[ModelSpec, TrainConfig]:
    """Config file values overridden by any flag that was given; both halves validated."""
    values: dict = load_config(args.config) if args.config else {}
    unknown = set(values) - set(SPEC_KEYS) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values.setdefault("batch_size", DESK_BATCH_SIZE)
    for key in list(SPEC_KEYS) + [f.name for f in fields(TrainConfig)]:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    spec = spec_from_config(values)
    config = TrainConfig.from_dict(values)
    return spec, config


def cmd_synth(args) -> int:
    _positive_int(args.count, "--count")
    summary = synth_generate(args.count, args.positive_fraction, args.size, args.seed, args.out)
    print(f"images\t{summary.count}")
    print(f"positive\t{summary.positives}")
    print(f"negative\t{summary.negatives}")
    print(f"boxes\t{summary.boxes}")
    return EXIT_OK


def cmd_split(args) -> int:
    data = Path(args.data)
    manifest = split_dataset(list_image_ids(data), args.seed)
    write_manifest(data / MANIFEST_NAME, manifest)
    for name in ("train", "val", "test"):
        print(f"{name}\t{len(manifest.section(name))}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec, config = merged_config(args)
    data = Path(args.data)
    manifest = _read_manifest(data)
    train_samples = [load_sample(data, i) for i in manifest.train]
    val_samples = [load_sample(data, i) for i in manifest.val]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(yaml.safe_dump({**spec.to_dict(), **config.to_dict()}, sort_keys=True))
    detector = build_model(spec, config.seed)
    records = train(train_samples, val_samples, detector, config, out)
    last = records[-1]
    print(f"epochs\t{len(records)}")
    print(f"final_train_loss\t{last.train_loss:.6f}")
    print(f"final_val_loss\t{last.val_loss:.6f}")
    return EXIT_OK


def _image_files(images: Path) -> list[Path]:
    if not images.is_dir():
        raise UsageError(f"{images} is not a directory")
    if (images / "images").is_dir():
        images = images / "images"
    return sorted(p for p in images.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_detect(args) -> int:
    thresholds = Thresholds(args.conf, args.iou)
    files = _image_files(Path(args.images))
    if not files:
        raise UsageError(f"no .png/.jpg images in {args.images}")
    checkpoint = Path(args.checkpoint)
    detector = load_detector(_model_config(checkpoint, args.config), checkpoint)
    per_image = []
    for lo in range(0, len(files), DESK_BATCH_SIZE):
        chunk = [Sample(p.stem, read_image(p)) for p in files[lo : lo + DESK_BATCH_SIZE]]
        for s, dets in zip(chunk, detect_batch(detector, chunk, thresholds)):
            per_image.append((s.image_id, dets))
    write_detections(args.out, per_image)
    print(f"images\t{len(files)}")
    print(f"detections\t{sum(len(d) for _, d in per_image)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.limit is not None:
        _positive_int(args.limit, "--limit")
    if not 0.0 <= args.gate <= 1.0:
        raise UsageError(f"--gate must be in [0, 1], got {args.gate}")
    data = Path(args.data)
    ids = list(_read_manifest(data).section(args.split))
    if args.limit is not None:
        ids = ids[: args.limit]
    if not ids:
        raise UsageError(f"split {args.split!r} of {data} is empty")
    checkpoint = Path(args.checkpoint)
    detector = load_detector(_model_config(checkpoint, args.config), checkpoint)
    samples = [load_sample(data, i) for i in ids]
    report, _ = evaluate_detector(detector, samples, gate=args.gate, nms_iou=args.iou)
    emit_report(report, args.out)
    print(f"images\t{len(samples)}")
    for k, v in report.scalars().items():
        print(f"{k}\t{'undefined' if v is None else f'{v:.4f}'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train, "detect": cmd_detect, "evaluate": cmd_evaluate}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        with threadpool_limits(args.threads):
            return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, SpecError, ManifestError, AnnotationError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
