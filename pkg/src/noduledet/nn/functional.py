"""Differentiable layer kernels on NCHW float32 tensors.

Each op computes its forward result with numpy and, when any input requires
grad, records a closure producing the exact gradient of every input.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import Tensor


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    if kh == 1 and kw == 1 and pad == 0:
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        cols = xs.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
        return cols, ho, wo
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    if kh == 1 and kw == 1 and pad == 0:
        g = dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
        if stride == 1:
            return np.ascontiguousarray(g)
        dx = np.zeros(x_shape, dtype=dcols.dtype)
        dx[:, :, ::stride, ::stride][:, :, :ho, :wo] = g
        return dx
    dcols = dcols.reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + hs : stride, j : j + ws : stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` [N,C,H,W] with ``w`` [K,C,kh,kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    k, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (k,):
        raise ValueError(f"conv2d bias shape {b.shape} does not match weight {w.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    ho, wo = _out_size(h, kh, stride, pad), _out_size(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty: input {x.shape}, weight {w.shape}, stride={stride}, pad={pad}")

    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(k, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    y = out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def _backward(g: np.ndarray):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, k)
        dx = dw = db = None
        if x.requires_grad:
            dx = _col2im(gmat @ wmat, x.shape, kh, kw, stride, pad, ho, wo)
        if w.requires_grad:
            dw = (gmat.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            db = gmat.sum(axis=0)
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._from_op(y, parents, _backward)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-3,
    momentum: float = 0.03,
    training: bool = False,
) -> Tensor:
    """Per-channel normalization.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place as
    ``running = (1 - momentum) * running + momentum * batch``.
    """
    if eps <= 0:
        raise ValueError(f"batch_norm2d needs eps > 0, got {eps}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm2d affine shapes {gamma.shape}/{beta.shape} do not match input {x.shape}")
    shape = (1, c, 1, 1)
    if training:
        m = n * h * w
        if m < 2:
            raise ValueError("batch_norm2d in training mode needs at least 2 values per channel (N*H*W >= 2)")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(shape)
        var = np.square(centered).mean(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        centered = x.data - running_mean.reshape(shape).astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = centered * invstd.reshape(shape)
    y = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def _backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                m = n * h * w
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
                dx = (invstd.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * invstd.reshape(shape)
        return dx, dgamma, dbeta

    return Tensor._from_op(y, (x, gamma, beta), _backward)


def silu(x: Tensor) -> Tensor:
    sig = expit(x.data)
    y = x.data * sig

    def _backward(g: np.ndarray):
        return (g * (sig * (1.0 + x.data * (1.0 - sig))),)

    return Tensor._from_op(y, (x,), _backward)


def maxpool2d(x: Tensor, k: int, stride: int | None = None, pad: int = 0) -> Tensor:
    """Window maximum with -inf padding; ties go to the first element in row-major order."""
    stride = k if stride is None else stride
    if k < 1 or stride < 1 or pad < 0:
        raise ValueError(f"maxpool2d needs k >= 1, stride >= 1, pad >= 0; got k={k} stride={stride} pad={pad}")
    n, c, h, w = x.shape
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"maxpool2d window {k} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x.data
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    best = xp[:, :, 0:hs:stride, 0:ws:stride].copy()
    idx = np.zeros(best.shape, dtype=np.int32)
    for i in range(k):
        for j in range(k):
            if i == 0 and j == 0:
                continue
            cand = xp[:, :, i : i + hs : stride, j : j + ws : stride]
            better = cand > best
            np.copyto(best, cand, where=better)
            idx[better] = i * k + j

    def _backward(g: np.ndarray):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                hit = idx == i * k + j
                if hit.any():
                    dxp[:, :, i : i + hs : stride, j : j + ws : stride] += np.where(hit, g, 0.0)
        return (dxp[:, :, pad : pad + h, pad : pad + w],)

    return Tensor._from_op(best, (x,), _backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    y = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)

    def _backward(g: np.ndarray):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(y, (x,), _backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    n, _, h, w = xs[0].shape
    for i, t in enumerate(xs):
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(f"concat_channels input {i} has shape {t.shape}, expected (N={n}, *, H={h}, W={w})")
    if len(xs) == 1:
        return xs[0]
    y = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def _backward(g: np.ndarray):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return Tensor._from_op(y, xs, _backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat_channels`."""
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to channel count {x.shape[1]}")
    out = []
    start = 0
    for size in sizes:
        lo, hi = start, start + size

        def _backward(g: np.ndarray, lo=lo, hi=hi):
            full = np.zeros(x.shape, dtype=g.dtype)
            full[:, lo:hi] = g
            return (full,)

        out.append(Tensor._from_op(x.data[:, lo:hi], (x,), _backward))
        start = hi
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, k: float) -> Tensor:
    """Multiply by a constant scalar ``k``."""
    k = x.data.dtype.type(k)
    return Tensor._from_op(x.data * k, (x,), lambda g: (g * k,))


def sum_all(x: Tensor) -> Tensor:
    return Tensor._from_op(np.array(x.data.sum(dtype=np.float64)), (x,),
                           lambda g: (np.full(x.shape, g, dtype=x.data.dtype),))
