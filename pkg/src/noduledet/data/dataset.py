"""On-disk dataset layout: ``images/<id>.png|jpg``, ``labels/<id>.txt``, ``manifest.txt``."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import parse_annotation_text
from .letterbox import Sample

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MANIFEST_NAME = "manifest.txt"


def list_image_ids(root: str | Path) -> list[str]:
    images = Path(root) / "images"
    if not images.is_dir():
        raise FileNotFoundError(f"no images/ directory under {root}")
    return sorted(p.stem for p in images.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def image_path(root: str | Path, image_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES + tuple(s.upper() for s in IMAGE_SUFFIXES):
        p = Path(root) / "images" / f"{image_id}{suffix}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image file for id {image_id!r} under {root}/images")


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB") if img.mode in ("RGBA", "P", "CMYK") else img.convert("L")
        return np.asarray(img).copy()


def load_sample(root: str | Path, image_id: str) -> Sample:
    pixels = read_image(image_path(root, image_id))
    label = Path(root) / "labels" / f"{image_id}.txt"
    boxes = parse_annotation_text(label.read_text()) if label.exists() else []
    return Sample(image_id, pixels, boxes)
