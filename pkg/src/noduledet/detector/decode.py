"""Turn raw head maps into scored boxes in network-input pixels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..nn import Tensor
from .spec import ModelSpec


@dataclass(frozen=True)
class CandidateBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float
    class_id: int = 0


@dataclass(frozen=True)
class Detection:
    """A kept box in original-image pixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float
    class_id: int = 0

    @property
    def degenerate(self) -> bool:
        return self.x_max <= self.x_min or self.y_max <= self.y_min

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _raw_array(r) -> np.ndarray:
    return r.data if isinstance(r, Tensor) else np.asarray(r)


def check_raw(raw: Sequence, spec: ModelSpec) -> None:
    if len(raw) != 3:
        raise ValueError(f"expected 3 head outputs, got {len(raw)}")
    n = _raw_array(raw[0]).shape[0]
    for r, g in zip(raw, spec.grid_sizes()):
        shape = _raw_array(r).shape
        if shape != (n, 3 * spec.outputs_per_anchor, g, g):
            raise ValueError(f"head output shape {shape} != {(n, 3 * spec.outputs_per_anchor, g, g)}")


def decode_arrays(raw: Sequence, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per image: (boxes [M,4] corner form, confidence [M], class_id [M]).

    Candidates are ordered scale, anchor, row, column.
    """
    check_raw(raw, spec)
    no = spec.outputs_per_anchor
    per_scale = []
    for r, stride, anchors in zip(raw, spec.strides, spec.anchors):
        a = _raw_array(r).astype(np.float64)
        n, _, g, _ = a.shape
        p = expit(a.reshape(n, 3, no, g, g))
        gy, gx = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        anc = np.asarray(anchors, dtype=np.float64).reshape(1, 3, 2, 1, 1)
        cx = (2.0 * p[:, :, 0] - 0.5 + gx) * stride
        cy = (2.0 * p[:, :, 1] - 0.5 + gy) * stride
        w = (2.0 * p[:, :, 2]) ** 2 * anc[:, :, 0]
        h = (2.0 * p[:, :, 3]) ** 2 * anc[:, :, 1]
        cls_prob = p[:, :, 5:]
        best = cls_prob.argmax(axis=2)
        conf = p[:, :, 4] * cls_prob.max(axis=2)
        boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
        per_scale.append((boxes.reshape(n, -1, 4), conf.reshape(n, -1), best.reshape(n, -1)))
    out = []
    for i in range(_raw_array(raw[0]).shape[0]):
        boxes = np.concatenate([s[0][i] for s in per_scale])
        np.clip(boxes, 0.0, spec.input_size, out=boxes)
        conf = np.concatenate([s[1][i] for s in per_scale])
        cls = np.concatenate([s[2][i] for s in per_scale])
        out.append((boxes, conf, cls))
    return out


def decode(raw: Sequence, spec: ModelSpec) -> list[list[CandidateBox]]:
    result = []
    for boxes, conf, cls in decode_arrays(raw, spec):
        result.append(
            [CandidateBox(*map(float, b), confidence=float(c), class_id=int(k)) for b, c, k in zip(boxes, conf, cls)]
        )
    return result
