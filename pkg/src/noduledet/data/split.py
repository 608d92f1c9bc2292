"""Seeded train/val/test partition and the manifest text format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SECTIONS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int = 0

    def section(self, name: str) -> tuple[str, ...]:
        if name not in SECTIONS:
            raise ManifestError(f"unknown split {name!r}; expected one of {SECTIONS}")
        return getattr(self, name)


def split_sizes(n: int) -> tuple[int, int, int]:
    """1000:300:200 proportions (2/3, 1/5, remainder), each part non-empty when n >= 3."""
    n_train, n_val = n * 2 // 3, n // 5
    if n >= 3:
        n_val = max(n_val, 1)
        n_train = min(max(n_train, 1), n - n_val - 1)
    return n_train, n_val, n - n_train - n_val


def split_dataset(ids: Sequence[str], seed: int = 0) -> DatasetManifest:
    if not ids:
        raise ValueError("cannot split an empty dataset")
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    order = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(order))
    shuffled = [order[i] for i in perm]
    n_train, n_val, _ = split_sizes(len(shuffled))
    return DatasetManifest(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
        seed,
    )


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [f"# seed {manifest.seed}"]
    for name in SECTIONS:
        lines.append(f"[{name}]")
        lines.extend(manifest.section(name))
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> DatasetManifest:
    parts: dict[str, list[str]] = {}
    current = None
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            words = line[1:].split()
            if len(words) == 2 and words[0] == "seed":
                seed = int(words[1])
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in SECTIONS:
                raise ManifestError(f"line {lineno}: unknown section [{current}]")
            if current in parts:
                raise ManifestError(f"line {lineno}: duplicate section [{current}]")
            parts[current] = []
            continue
        if current is None:
            raise ManifestError(f"line {lineno}: id {line!r} before any section header")
        parts[current].append(line)
    missing = [s for s in SECTIONS if s not in parts]
    if missing:
        raise ManifestError(f"manifest missing sections: {missing}")
    seen: set[str] = set()
    for name in SECTIONS:
        dup = seen.intersection(parts[name])
        if dup:
            raise ManifestError(f"id {sorted(dup)[0]!r} appears in more than one section")
        seen.update(parts[name])
    return DatasetManifest(tuple(parts["train"]), tuple(parts["val"]), tuple(parts["test"]), seed)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    Path(path).write_text(format_manifest(manifest))


def read_manifest(path: str | Path) -> DatasetManifest:
    return parse_manifest(Path(path).read_text())
