"""Ground-truth to anchor assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..detector.spec import ModelSpec

ANCHOR_RATIO_THRESHOLD = 4.0


@dataclass(frozen=True)
class AssignedTarget:
    scale: int
    anchor: int
    cell_x: int
    cell_y: int
    box: tuple[float, float, float, float]  # cx, cy, w, h in network-input pixels
    class_id: int = 0
    image_index: int = 0


def anchor_matches(w: float, h: float, aw: float, ah: float, threshold: float = ANCHOR_RATIO_THRESHOLD) -> bool:
    return max(w / aw, aw / w, h / ah, ah / h) < threshold


def _neighbor(frac: float, cell: int) -> int:
    # nearer adjacent cell along one axis; an exact midpoint goes to the lower index
    return cell - 1 if frac <= 0.5 else cell + 1


def assign_targets(
    gt: Sequence[Sequence[float]] | np.ndarray,
    spec: ModelSpec,
    image_index: int = 0,
) -> list[AssignedTarget]:
    """Match each ``(class_id, cx, cy, w, h)`` pixel box to anchors and grid cells.

    A box matches an anchor when no side ratio reaches the threshold. Each
    match yields the containing cell plus the nearer horizontal and nearer
    vertical neighbour (when inside the grid). Repeated (scale, anchor, cell)
    keys keep their first occurrence.
    """
    out: list[AssignedTarget] = []
    seen: set[tuple[int, int, int, int]] = set()
    for row in np.asarray(gt, dtype=np.float64).reshape(-1, 5):
        cls, cx, cy, w, h = row
        if w <= 0 or h <= 0:
            continue
        for si, (stride, anchors) in enumerate(zip(spec.strides, spec.anchors)):
            grid = spec.input_size // stride
            gx, gy = cx / stride, cy / stride
            ix = min(int(np.floor(gx)), grid - 1)
            iy = min(int(np.floor(gy)), grid - 1)
            fx, fy = gx - ix, gy - iy
            cells = [(ix, iy), (_neighbor(fx, ix), iy), (ix, _neighbor(fy, iy))]
            for ai, (aw, ah) in enumerate(anchors):
                if not anchor_matches(w, h, aw, ah):
                    continue
                for x, y in cells:
                    if not (0 <= x < grid and 0 <= y < grid):
                        continue
                    key = (si, ai, x, y)
                    if key in seen:
                        continue
                    seen.add(key)
                    out.append(AssignedTarget(si, ai, x, y, (cx, cy, w, h), int(cls), image_index))
    return out


def assign_batch(gts: Sequence, spec: ModelSpec) -> list[AssignedTarget]:
    """Assignments for a batch; ``gts[i]`` holds the pixel boxes of image ``i``."""
    targets: list[AssignedTarget] = []
    for i, boxes in enumerate(gts):
        targets.extend(assign_targets(boxes, spec, image_index=i))
    return targets
