"""Epoch loop: shuffle, batch, forward, loss, backward, SGD step, validate, checkpoint."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..data.augment import AugmentParams, augment, sample_rng
from ..data.letterbox import Sample, letterbox, normalize
from ..detector import Detector
from ..nn import backward, scale
from .assign import assign_batch
from .loss import LossParts, compute_loss
from .optim import SGD

log = logging.getLogger(__name__)

LOG_NAME = "train.log"
LOG_COLUMNS = ("epoch", "train_box", "train_obj", "train_cls", "val_loss", "seconds")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 32
    epochs: int = 50
    momentum: float = 0.9
    weight_decay: float = 0.0005
    box_weight: float = 0.05
    obj_weight: float = 1.0
    cls_weight: float = 0.5
    seed: int = 0
    augment: bool = True

    def violations(self) -> list[str]:
        problems = []
        for name in ("learning_rate", "batch_size", "epochs", "momentum", "weight_decay", "box_weight", "obj_weight", "cls_weight"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("batch_size", "epochs"):
            if int(getattr(self, name)) != getattr(self, name):
                problems.append(f"{name} must be an integer")
        return problems

    def validate(self) -> "TrainConfig":
        problems = self.violations()
        if problems:
            raise ValueError("invalid training config: " + "; ".join(problems))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d and d[f.name] is not None:
                kwargs[f.name] = type(getattr(cls, f.name))(d[f.name])
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_box: float
    train_obj: float
    train_cls: float
    val_loss: float
    seconds: float

    @property
    def train_loss(self) -> float:
        return self.train_box + self.train_obj + self.train_cls

    def format(self) -> str:
        return (
            f"{self.epoch}\t{self.train_box:.6f}\t{self.train_obj:.6f}\t{self.train_cls:.6f}"
            f"\t{self.val_loss:.6f}\t{self.seconds:.2f}"
        )


def prepare_batch(samples: Sequence[Sample], input_size: int) -> tuple[np.ndarray, list[np.ndarray]]:
    inputs, gts = [], []
    for s in samples:
        raster, _, boxes = letterbox(s, input_size)
        inputs.append(normalize(raster))
        gts.append(boxes)
    return np.stack(inputs), gts


def batch_loss(detector: Detector, samples: Sequence[Sample], config: TrainConfig, training: bool):
    x, gts = prepare_batch(samples, detector.spec.input_size)
    raw = detector.forward(x, training=training)
    targets = assign_batch(gts, detector.spec)
    return compute_loss(raw, targets, detector.spec, config.box_weight, config.obj_weight, config.cls_weight)


def validation_loss(detector: Detector, samples: Sequence[Sample], config: TrainConfig) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    for i in range(0, len(samples), config.batch_size):
        chunk = samples[i : i + config.batch_size]
        _, parts = batch_loss(detector, chunk, config, training=False)
        total += parts.total * len(chunk)
    return total / len(samples)


def log_header(config: TrainConfig) -> str:
    lines = [f"# {k} {v}" for k, v in config.to_dict().items()]
    lines.append("# " + "\t".join(LOG_COLUMNS))
    return "\n".join(lines) + "\n"


def train(
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    detector: Detector,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    augment_params: AugmentParams = AugmentParams(),
) -> list[EpochRecord]:
    """Run the full schedule; writes ``train.log`` and checkpoints when ``out_dir`` is given."""
    config.validate()
    if not train_samples:
        raise ValueError("training split is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / LOG_NAME).write_text(log_header(config))

    opt = SGD(detector.parameters(), config.learning_rate, config.momentum, config.weight_decay)
    records: list[EpochRecord] = []
    best = math.inf
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_samples))
        sums = np.zeros(3)
        n_seen = 0
        for bi, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_samples[i] for i in order[lo : lo + config.batch_size]]
            if config.augment:
                batch = [augment(s, sample_rng(config.seed, s.image_id, epoch), augment_params) for s in batch]
            loss, parts = batch_loss(detector, batch, config, training=True)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(epoch, bi, parts.total)
            opt.zero_grad()
            # The loss is a per-image mean; like the YOLOv5 family, the step
            # uses its sum over the batch, so the gradient grows with batch size.
            backward(scale(loss, len(batch)))
            opt.step()
            sums += np.array([config.box_weight * parts.box, config.obj_weight * parts.obj, config.cls_weight * parts.cls]) * len(batch)
            n_seen += len(batch)
        val = validation_loss(detector, val_samples, config)
        box, obj, cls = sums / n_seen
        rec = EpochRecord(epoch, float(box), float(obj), float(cls), float(val), time.perf_counter() - start)
        records.append(rec)
        log.info("epoch %d: train %.4f (box %.4f obj %.4f cls %.4f) val %.4f [%.1fs]",
                 epoch, rec.train_loss, box, obj, cls, val, rec.seconds)
        if out is not None:
            with open(out / LOG_NAME, "a") as fh:
                fh.write(rec.format() + "\n")
            detector.save(out / f"epoch_{epoch}.ndck")
            score = val if math.isfinite(val) else rec.train_loss
            if score < best:
                best = score
                detector.save(out / "best.ndck")
        if on_epoch is not None:
            on_epoch(rec)
    return records
