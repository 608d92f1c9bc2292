"""YOLO-style text annotations: one ``class cx cy w h`` line per box, normalized."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable


# Six-decimal rendering can push an edge box's extent just past the border;
# overshoot up to this much is rounding, not content, and is left alone.
EDGE_TOLERANCE = 1e-6


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_corners(cls, class_id: int, x1: float, y1: float, x2: float, y2: float) -> "GroundTruthBox":
        return cls(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def clipped(self) -> "GroundTruthBox | None":
        """Clip the extent to the unit square (beyond rounding slack); ``None`` if nothing is left."""
        x1, y1, x2, y2 = self.corners()
        if x1 >= -EDGE_TOLERANCE and y1 >= -EDGE_TOLERANCE and x2 <= 1.0 + EDGE_TOLERANCE and y2 <= 1.0 + EDGE_TOLERANCE:
            return self
        x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
        y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
        if x2 <= x1 or y2 <= y1:
            return None
        return GroundTruthBox.from_corners(self.class_id, x1, y1, x2, y2)


def parse_annotation_text(text: str) -> list[GroundTruthBox]:
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise AnnotationError(f"line {lineno}: expected 5 fields, got {len(fields)}")
        try:
            cls_value = float(fields[0])
            values = [float(f) for f in fields[1:]]
        except ValueError:
            raise AnnotationError(f"line {lineno}: non-numeric field in {line.strip()!r}") from None
        if not cls_value.is_integer():
            raise AnnotationError(f"line {lineno}: class id must be an integer, got {fields[0]!r}")
        if cls_value < 0:
            raise AnnotationError(f"line {lineno}: negative class id {fields[0]}")
        for name, v in zip(("cx", "cy", "w", "h"), values):
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise AnnotationError(f"line {lineno}: {name}={v} outside [0, 1]")
        if values[2] <= 0 or values[3] <= 0:
            raise AnnotationError(f"line {lineno}: box width and height must be positive")
        box = GroundTruthBox(int(cls_value), *values).clipped()
        if box is None:
            raise AnnotationError(f"line {lineno}: box lies outside the image")
        boxes.append(box)
    return boxes


def format_annotations(boxes: Iterable[GroundTruthBox]) -> str:
    return "".join(f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes)
