"""Aspect-preserving resize with padding, its inverse, and pixel normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..detector.decode import CandidateBox, Detection
from .annotations import GroundTruthBox

PAD_VALUE = 114


@dataclass
class Sample:
    image_id: str
    pixels: np.ndarray  # uint8, HxW or HxWx3
    boxes: list[GroundTruthBox] = field(default_factory=list)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def is_positive(self) -> bool:
        return bool(self.boxes)


@dataclass(frozen=True)
class LetterboxMeta:
    scale: float
    pad_left: int
    pad_top: int
    original_w: int
    original_h: int

    @property
    def resized_w(self) -> int:
        return _round_half_up(self.original_w * self.scale)

    @property
    def resized_h(self) -> int:
        return _round_half_up(self.original_h * self.scale)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize_bilinear(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    if pixels.shape[1] == width and pixels.shape[0] == height:
        return pixels.copy()
    return np.asarray(Image.fromarray(pixels).resize((width, height), Image.BILINEAR))


def letterbox(sample: Sample, input_size: int) -> tuple[np.ndarray, LetterboxMeta, np.ndarray]:
    """Fit ``sample`` into an ``input_size`` square.

    Returns the padded raster, the transform, and the boxes as an ``[M, 5]``
    array of ``(class_id, cx, cy, w, h)`` in padded-raster pixels.
    """
    if input_size <= 0:
        raise ValueError(f"input_size must be positive, got {input_size}")
    h, w = sample.pixels.shape[:2]
    if h == 0 or w == 0:
        raise ValueError(f"image {sample.image_id!r} has a zero dimension ({w}x{h})")
    scale = input_size / max(w, h)
    new_w, new_h = _round_half_up(w * scale), _round_half_up(h * scale)
    pad_left, pad_top = (input_size - new_w) // 2, (input_size - new_h) // 2
    meta = LetterboxMeta(scale, pad_left, pad_top, w, h)

    resized = resize_bilinear(sample.pixels, new_w, new_h)
    canvas = np.full((input_size, input_size) + sample.pixels.shape[2:], PAD_VALUE, dtype=np.uint8)
    canvas[pad_top : pad_top + new_h, pad_left : pad_left + new_w] = resized

    boxes = np.array(
        [(b.class_id, b.cx * new_w + pad_left, b.cy * new_h + pad_top, b.w * new_w, b.h * new_h) for b in sample.boxes],
        dtype=np.float64,
    ).reshape(-1, 5)
    return canvas, meta, boxes


def unletterbox(box: CandidateBox | Detection, meta: LetterboxMeta) -> Detection:
    """Map a network-input box back to original pixels, clipped to the image.

    A box lying entirely in the padding comes back with zero area
    (``Detection.degenerate`` is true).
    """
    sx = meta.original_w / meta.resized_w
    sy = meta.original_h / meta.resized_h

    def fx(x):
        return min(max((x - meta.pad_left) * sx, 0.0), float(meta.original_w))

    def fy(y):
        return min(max((y - meta.pad_top) * sy, 0.0), float(meta.original_h))

    return Detection(fx(box.x_min), fy(box.y_min), fx(box.x_max), fy(box.y_max), box.confidence, box.class_id)


def normalize(raster: np.ndarray) -> np.ndarray:
    """uint8 raster -> float32 [3, H, W] in [0, 1]; grayscale is replicated."""
    x = raster.astype(np.float32) / np.float32(255.0)
    if x.ndim == 2:
        return np.repeat(x[None], 3, axis=0)
    return np.ascontiguousarray(x.transpose(2, 0, 1))
