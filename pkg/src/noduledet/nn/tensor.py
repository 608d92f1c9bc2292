"""Dense float32 tensors with a recorded graph for reverse-mode differentiation."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DTYPE = np.float32
_compute_dtype = [DTYPE]


def compute_dtype():
    return _compute_dtype[-1]


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily build tensors in another float type.

    Only the finite-difference oracle uses this (float64); models, training
    and checkpoints are float32.
    """
    _compute_dtype.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _compute_dtype.pop()


class GraphError(RuntimeError):
    """Raised for misuse of the recorded graph (non-scalar backward, reuse)."""


class Tensor:
    """An N-d float array (float32 unless under :func:`precision`) plus an optional gradient buffer.

    Tensors produced by ops keep a reference to their parents and a closure
    that maps the upstream gradient to one gradient per parent. Leaf tensors
    with ``requires_grad`` receive accumulated gradients in ``.grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=compute_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=compute_dtype())
        out.grad = None
        parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._consumed = False
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients accumulate into existing buffers; callers zero them between
    steps. A graph may be traversed once.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward(); run forward again")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.grad is None:
                node.grad = g.astype(node.data.dtype, copy=True)
            else:
                node.grad += g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._consumed = True
            # release closures so saved activations can be freed
            node._backward = None
            node._parents = ()
    loss._consumed = True
