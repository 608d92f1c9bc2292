"""Central finite-difference oracle shared by the gradient tests."""

from __future__ import annotations

import numpy as np

H = 1e-3
REL_TOL = 1e-2
DENOM_FLOOR = 1e-3


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOM_FLOOR)


def finite_difference(f, array: np.ndarray, indices, h: float = H) -> np.ndarray:
    """d f / d array[idx] for each idx by central differences; ``array`` is perturbed in place."""
    out = []
    for idx in indices:
        orig = array[idx].copy()
        array[idx] = orig + h
        fp = f()
        array[idx] = orig - h
        fm = f()
        array[idx] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def all_indices(shape):
    return list(np.ndindex(*shape))


def sample_indices(shape, k: int, rng: np.random.Generator):
    flat = rng.choice(int(np.prod(shape)), size=min(k, int(np.prod(shape))), replace=False)
    return [np.unravel_index(i, shape) for i in np.sort(flat)]
