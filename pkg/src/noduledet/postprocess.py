"""Box overlap, confidence gating and non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data.letterbox import Sample, letterbox, normalize, unletterbox
from .detector import CandidateBox, Detection, Detector, decode_arrays

CONF_THRESHOLD = 0.5
IOU_THRESHOLD = 0.45


@dataclass(frozen=True)
class Thresholds:
    confidence: float = CONF_THRESHOLD
    iou: float = IOU_THRESHOLD

    def __post_init__(self):
        for name in ("confidence", "iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} threshold must be in [0, 1], got {v}")


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two corner-form boxes; 0 when the union is empty."""
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    iw = np.clip(np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0]), 0, None)
    ih = np.clip(np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1]), 0, None)
    inter = iw * ih
    union = (box[2] - box[0]) * (box[3] - box[1]) + (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms_indices(
    boxes: np.ndarray,
    scores: np.ndarray,
    classes: np.ndarray,
    conf_threshold: float = CONF_THRESHOLD,
    iou_threshold: float = IOU_THRESHOLD,
) -> np.ndarray:
    """Indices of kept boxes, in keep order.

    Candidates at or below ``conf_threshold`` are dropped. The rest are visited
    by descending score (ties: smaller x_min, then smaller y_min) and each kept
    box removes later boxes of its class overlapping it by more than
    ``iou_threshold``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    live = np.flatnonzero(scores > conf_threshold)
    if live.size == 0:
        return live
    order = live[np.lexsort((boxes[live, 1], boxes[live, 0], -scores[live]))]
    keep = []
    alive = np.ones(order.size, dtype=bool)
    for pos in range(order.size):
        if not alive[pos]:
            continue
        i = order[pos]
        keep.append(i)
        rest = order[pos + 1 :]
        same = alive[pos + 1 :] & (classes[rest] == classes[i])
        if same.any():
            ov = iou_one_to_many(boxes[i], boxes[rest])
            alive[pos + 1 :] &= ~(same & (ov > iou_threshold))
    return np.asarray(keep, dtype=np.int64)


def nms(
    candidates: Sequence[CandidateBox],
    conf_threshold: float = CONF_THRESHOLD,
    iou_threshold: float = IOU_THRESHOLD,
) -> list[Detection]:
    if not candidates:
        return []
    boxes = np.array([(c.x_min, c.y_min, c.x_max, c.y_max) for c in candidates])
    scores = np.array([c.confidence for c in candidates])
    classes = np.array([c.class_id for c in candidates])
    keep = nms_indices(boxes, scores, classes, conf_threshold, iou_threshold)
    return [Detection(c.x_min, c.y_min, c.x_max, c.y_max, c.confidence, c.class_id) for c in (candidates[i] for i in keep)]


def detect_batch(detector: Detector, samples: Sequence[Sample], thresholds: Thresholds = Thresholds()) -> list[list[Detection]]:
    """letterbox -> normalize -> eval forward -> decode -> NMS -> original-image pixels."""
    if not samples:
        return []
    size = detector.spec.input_size
    inputs, metas = [], []
    for s in samples:
        raster, meta, _ = letterbox(s, size)
        inputs.append(normalize(raster))
        metas.append(meta)
    raw = detector.forward(np.stack(inputs), training=False)
    results = []
    for (boxes, conf, cls), meta in zip(decode_arrays(raw, detector.spec), metas):
        keep = nms_indices(boxes, conf, cls, thresholds.confidence, thresholds.iou)
        dets = [unletterbox(CandidateBox(*map(float, boxes[i]), float(conf[i]), int(cls[i])), meta) for i in keep]
        results.append(dets)
    return results


def detect_image(detector: Detector, sample: Sample, thresholds: Thresholds = Thresholds()) -> list[Detection]:
    return detect_batch(detector, [sample], thresholds)[0]


def format_detections(per_image: Iterable[tuple[str, Sequence[Detection]]]) -> str:
    """``image_id class_id confidence x_min y_min x_max y_max`` lines, sorted by id then confidence."""
    rows = []
    for image_id, dets in per_image:
        for d in dets:
            rows.append((image_id, -d.confidence, d))
    rows.sort(key=lambda r: (r[0], r[1]))
    return "".join(
        f"{image_id} {d.class_id} {d.confidence:.2f} {d.x_min:.2f} {d.y_min:.2f} {d.x_max:.2f} {d.y_max:.2f}\n"
        for image_id, _, d in rows
    )


def write_detections(path: str | Path, per_image: Iterable[tuple[str, Sequence[Detection]]]) -> None:
    Path(path).write_text(format_detections(per_image))
