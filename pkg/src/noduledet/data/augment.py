"""Seeded flip / rotation / crop augmentation that keeps boxes consistent."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .annotations import GroundTruthBox
from .letterbox import PAD_VALUE, Sample


@dataclass(frozen=True)
class AugmentParams:
    flip_p: float = 0.5
    rotate_p: float = 0.5
    max_degrees: float = 10.0
    crop_p: float = 0.5
    crop_min_area: float = 0.8
    min_box_keep: float = 0.25


def sample_rng(seed: int, image_id: str, epoch: int) -> np.random.Generator:
    """Per-sample generator derived from (seed, image id, epoch)."""
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8")), epoch])


def hflip(sample: Sample) -> Sample:
    boxes = [GroundTruthBox(b.class_id, 1.0 - b.cx, b.cy, b.w, b.h) for b in sample.boxes]
    return Sample(sample.image_id, np.ascontiguousarray(sample.pixels[:, ::-1]), boxes)


def rotate_points(points: np.ndarray, degrees: float, cx: float, cy: float) -> np.ndarray:
    """Rotate pixel points counter-clockwise as displayed (y axis pointing down)."""
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    dx, dy = points[:, 0] - cx, points[:, 1] - cy
    return np.stack([cx + c * dx + s * dy, cy - s * dx + c * dy], axis=1)


def rotate(sample: Sample, degrees: float) -> Sample:
    """Rotate about the image center; each box becomes the hull of its rotated corners."""
    if degrees == 0:
        return Sample(sample.image_id, sample.pixels.copy(), list(sample.boxes))
    h, w = sample.pixels.shape[:2]
    fill = PAD_VALUE if sample.pixels.ndim == 2 else (PAD_VALUE,) * 3
    img = Image.fromarray(sample.pixels).rotate(degrees, resample=Image.BILINEAR, fillcolor=fill)
    boxes = []
    for b in sample.boxes:
        x1, y1, x2, y2 = b.corners()
        pts = np.array([[x1 * w, y1 * h], [x2 * w, y1 * h], [x2 * w, y2 * h], [x1 * w, y2 * h]])
        r = rotate_points(pts, degrees, w / 2, h / 2)
        hull = GroundTruthBox.from_corners(
            b.class_id, r[:, 0].min() / w, r[:, 1].min() / h, r[:, 0].max() / w, r[:, 1].max() / h
        ).clipped()
        if hull is not None:
            boxes.append(hull)
    return Sample(sample.image_id, np.asarray(img), boxes)


def crop(sample: Sample, left: int, top: int, width: int, height: int, min_keep: float = 0.25) -> Sample:
    """Cut a window; boxes are clipped and dropped below ``min_keep`` of their area."""
    h, w = sample.pixels.shape[:2]
    boxes = []
    for b in sample.boxes:
        x1, y1, x2, y2 = b.corners()
        x1, x2 = x1 * w, x2 * w
        y1, y2 = y1 * h, y2 * h
        cx1, cy1 = max(x1, left), max(y1, top)
        cx2, cy2 = min(x2, left + width), min(y2, top + height)
        if cx2 <= cx1 or cy2 <= cy1:
            continue
        if (cx2 - cx1) * (cy2 - cy1) < min_keep * (x2 - x1) * (y2 - y1):
            continue
        box = GroundTruthBox.from_corners(
            b.class_id, (cx1 - left) / width, (cy1 - top) / height, (cx2 - left) / width, (cy2 - top) / height
        ).clipped()
        if box is not None:
            boxes.append(box)
    pixels = np.ascontiguousarray(sample.pixels[top : top + height, left : left + width])
    return Sample(sample.image_id, pixels, boxes)


def augment(sample: Sample, rng: np.random.Generator, params: AugmentParams = AugmentParams()) -> Sample:
    # draw every random number up front so the stream does not depend on branches
    u_flip, u_rot, u_crop = rng.random(3)
    degrees = rng.uniform(-params.max_degrees, params.max_degrees)
    area = rng.uniform(params.crop_min_area, 1.0)
    off_x, off_y = rng.random(2)

    out = sample
    if u_flip < params.flip_p:
        out = hflip(out)
    if u_rot < params.rotate_p:
        out = rotate(out, degrees)
    if u_crop < params.crop_p:
        h, w = out.pixels.shape[:2]
        side = math.sqrt(area)
        cw, ch = max(1, int(round(w * side))), max(1, int(round(h * side)))
        left, top = int(off_x * (w - cw + 1)), int(off_y * (h - ch + 1))
        out = crop(out, left, top, cw, ch, params.min_box_keep)
    return out
