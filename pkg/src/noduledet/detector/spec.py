"""Model specification and its YAML config representation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEFAULT_ANCHORS: tuple[tuple[tuple[float, float], ...], ...] = (
    ((10, 13), (16, 30), (33, 23)),  # P3/8
    ((30, 61), (62, 45), (59, 119)),  # P4/16
    ((116, 90), (156, 198), (373, 326)),  # P5/32
)
DEFAULT_STRIDES = (8, 16, 32)

SPEC_KEYS = ("width_multiple", "depth_multiple", "num_classes", "input_size", "anchors", "strides")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    width_multiple: float = 0.125
    depth_multiple: float = 0.33
    num_classes: int = 1
    input_size: int = 416
    strides: tuple[int, ...] = DEFAULT_STRIDES
    anchors: tuple[tuple[tuple[float, float], ...], ...] = DEFAULT_ANCHORS

    def violations(self) -> list[str]:
        problems = []
        if not 0 < self.width_multiple <= 1:
            problems.append(f"width_multiple must be in (0, 1], got {self.width_multiple}")
        if not 0 < self.depth_multiple <= 1:
            problems.append(f"depth_multiple must be in (0, 1], got {self.depth_multiple}")
        if int(self.num_classes) != self.num_classes or self.num_classes < 1:
            problems.append(f"num_classes must be an integer >= 1, got {self.num_classes}")
        if tuple(self.strides) != DEFAULT_STRIDES:
            problems.append(f"strides must be {list(DEFAULT_STRIDES)}, got {list(self.strides)}")
        if int(self.input_size) != self.input_size or self.input_size <= 0 or self.input_size % 32:
            problems.append(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.anchors) != 3 or any(len(a) != 3 for a in self.anchors):
            problems.append("anchors must be 3 scales x 3 (width, height) pairs")
        elif any(len(p) != 2 or p[0] <= 0 or p[1] <= 0 for a in self.anchors for p in a):
            problems.append("anchors must be strictly positive (width, height) pairs")
        return problems

    def validate(self) -> "ModelSpec":
        problems = self.violations()
        if problems:
            raise SpecError("invalid model spec: " + "; ".join(problems))
        return self

    @property
    def outputs_per_anchor(self) -> int:
        return 5 + self.num_classes

    def grid_sizes(self) -> list[int]:
        return [self.input_size // s for s in self.strides]

    def channels(self, base: int) -> int:
        return max(8, int(round(base * self.width_multiple / 8)) * 8)

    def depth(self, base: int) -> int:
        return max(1, round(base * self.depth_multiple))

    def to_dict(self) -> dict:
        return {
            "width_multiple": float(self.width_multiple),
            "depth_multiple": float(self.depth_multiple),
            "num_classes": int(self.num_classes),
            "input_size": int(self.input_size),
            "anchors": [float(v) for scale in self.anchors for pair in scale for v in pair],
            "strides": [int(s) for s in self.strides],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kwargs = {}
        for key in ("width_multiple", "depth_multiple"):
            if key in d:
                kwargs[key] = float(d[key])
        for key in ("num_classes", "input_size"):
            if key in d:
                kwargs[key] = int(d[key])
        if "strides" in d:
            kwargs["strides"] = tuple(int(s) for s in d["strides"])
        if "anchors" in d:
            flat = [float(v) for v in d["anchors"]]
            if len(flat) != 18:
                raise SpecError(f"anchors must be a flat list of 18 numbers, got {len(flat)}")
            kwargs["anchors"] = tuple(
                tuple((flat[6 * i + 2 * j], flat[6 * i + 2 * j + 1]) for j in range(3)) for i in range(3)
            )
        return cls(**kwargs).validate()


def load_config(path: str | Path) -> dict:
    """Read a YAML key/value config file into a plain dict."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise SpecError(f"{path}: expected a mapping of keys to values")
    return data


def spec_from_config(config: dict) -> ModelSpec:
    return ModelSpec.from_dict({k: config[k] for k in SPEC_KEYS if k in config})
