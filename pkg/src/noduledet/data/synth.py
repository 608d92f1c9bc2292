"""Seeded synthetic chest-radiograph stand-in: smooth background, rib bands, bright blobs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import GroundTruthBox, format_annotations

NOISE_SIGMA = 8.0
MIN_RADIUS, MAX_RADIUS = 8.0, 40.0
# radii are capped at a quarter of the side so blobs fit small test images
MIN_IMAGE_SIZE = 4 * int(MIN_RADIUS)


@dataclass(frozen=True)
class Blob:
    cx: float
    cy: float
    radius: float
    peak: float

    @property
    def sigma(self) -> float:
        return self.radius / 2.0

    def box(self, size: int) -> GroundTruthBox:
        # center +- 2 sigma, in normalized coordinates
        half = 2.0 * self.sigma
        return GroundTruthBox.from_corners(
            0, (self.cx - half) / size, (self.cy - half) / size, (self.cx + half) / size, (self.cy + half) / size
        ).clipped()


@dataclass(frozen=True)
class SynthSummary:
    count: int
    positives: int
    negatives: int
    boxes: int


def render_background(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    t = yy / size
    top, bottom = rng.uniform(50, 80), rng.uniform(120, 160)
    img = top + (bottom - top) * t
    freq = rng.uniform(5.0, 8.0)
    phase = rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(-0.15, 0.15)
    img += rng.uniform(10, 20) * np.sin(2 * np.pi * freq * (t + tilt * xx / size) + phase)
    img += rng.uniform(5, 12) * np.cos(2 * np.pi * xx / size)
    return img


def render_blob(size: int, blob: Blob) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    d2 = (xx - blob.cx) ** 2 + (yy - blob.cy) ** 2
    return blob.peak * np.exp(-d2 / (2 * blob.sigma**2))


def sample_blobs(size: int, rng: np.random.Generator) -> list[Blob]:
    blobs: list[Blob] = []
    target = int(rng.integers(1, 4))
    for _ in range(50 * target):
        if len(blobs) == target:
            break
        r = rng.uniform(MIN_RADIUS, min(MAX_RADIUS, size / 4))
        cx, cy = rng.uniform(r, size - r, 2)
        peak = rng.uniform(40.0, 90.0)
        if all((cx - b.cx) ** 2 + (cy - b.cy) ** 2 > (r + b.radius) ** 2 for b in blobs):
            blobs.append(Blob(float(cx), float(cy), float(r), float(peak)))
    return blobs


def synth_image(size: int, positive: bool, rng: np.random.Generator) -> tuple[np.ndarray, list[Blob]]:
    img = render_background(size, rng)
    blobs = sample_blobs(size, rng) if positive else []
    for blob in blobs:
        img += render_blob(size, blob)
    img += rng.normal(0.0, NOISE_SIGMA, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), blobs


def synth_generate(
    n: int,
    positive_fraction: float,
    image_size: int,
    seed: int,
    out_dir: str | Path,
) -> SynthSummary:
    """Write ``n`` images and their annotation files under ``out_dir``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0, 1], got {positive_fraction}")
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be >= {MIN_IMAGE_SIZE}, got {image_size}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    n_pos = int(round(n * positive_fraction))
    positive = np.zeros(n, dtype=bool)
    positive[np.random.default_rng([seed, 0]).permutation(n)[:n_pos]] = True

    n_boxes = 0
    for i in range(n):
        image_id = f"img_{i:05d}"
        rng = np.random.default_rng([seed, 1, i])
        pixels, blobs = synth_image(image_size, bool(positive[i]), rng)
        Image.fromarray(pixels, mode="L").save(out / "images" / f"{image_id}.png", optimize=False)
        boxes = [b.box(image_size) for b in blobs]
        (out / "labels" / f"{image_id}.txt").write_text(format_annotations(boxes))
        n_boxes += len(boxes)
    return SynthSummary(n, n_pos, n - n_pos, n_boxes)
