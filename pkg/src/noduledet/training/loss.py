"""Complete-IoU box regression and the three-part detection loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..detector.decode import check_raw
from ..detector.spec import ModelSpec
from ..nn import Tensor
from .assign import AssignedTarget

OBJ_BALANCE = (4.0, 1.0, 0.4)
_EPS = 1e-9
_MIN_SIDE = 1e-6
_V_SCALE = 4.0 / math.pi**2


def ciou(a: Sequence[float], b: Sequence[float]) -> float:
    """Complete-IoU of two corner-form boxes ``(x_min, y_min, x_max, y_max)``."""
    for box in (a, b):
        if box[2] - box[0] <= 0 or box[3] - box[1] <= 0:
            raise ValueError(f"ciou requires positive-area boxes, got {tuple(box)}")
    ca = _corners_to_cxcywh(np.asarray(a, dtype=np.float64)[None])
    cb = _corners_to_cxcywh(np.asarray(b, dtype=np.float64)[None])
    value, _ = ciou_and_grad(ca, cb)
    return float(value[0])


def _corners_to_cxcywh(b: np.ndarray) -> np.ndarray:
    return np.stack([(b[:, 0] + b[:, 2]) / 2, (b[:, 1] + b[:, 3]) / 2, b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]], axis=1)


def ciou_and_grad(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CIoU between center-size boxes ``[M,4]`` and its gradient w.r.t. ``pred``.

    The aspect weight alpha is differentiated through, so the gradient is that
    of the returned value.
    """
    px, py, pw, ph = pred.T
    gx, gy, gw, gh = gt.T
    px1, px2, py1, py2 = px - pw / 2, px + pw / 2, py - ph / 2, py + ph / 2
    gx1, gx2, gy1, gy2 = gx - gw / 2, gx + gw / 2, gy - gh / 2, gy + gh / 2

    iw_raw = np.minimum(px2, gx2) - np.maximum(px1, gx1)
    ih_raw = np.minimum(py2, gy2) - np.maximum(py1, gy1)
    iw, ih = np.maximum(iw_raw, 0.0), np.maximum(ih_raw, 0.0)
    inter = iw * ih
    area_p, area_g = pw * ph, gw * gh
    union = area_p + area_g - inter
    iou = inter / union

    cw = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    ch = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    c2 = cw**2 + ch**2 + _EPS
    rho2 = (px - gx) ** 2 + (py - gy) ** 2
    dist = rho2 / c2

    delta = np.arctan(gw / gh) - np.arctan(pw / ph)
    v = _V_SCALE * delta**2
    denom = 1.0 - iou + v + _EPS
    penalty = v**2 / denom  # alpha * v with alpha = v / denom
    value = iou - dist - penalty

    # d value / d (iou, dist, v)
    d_iou = 1.0 - v**2 / denom**2
    d_v = -(2.0 * v / denom - v**2 / denom**2)

    # iou -> inter, area_p
    d_inter = d_iou * (union + inter) / union**2
    d_area_p = -d_iou * inter / union**2
    wpos, hpos = iw_raw > 0, ih_raw > 0
    d_px1 = -d_inter * ih * (wpos & (px1 >= gx1))
    d_px2 = d_inter * ih * (wpos & (px2 <= gx2))
    d_py1 = -d_inter * iw * (hpos & (py1 >= gy1))
    d_py2 = d_inter * iw * (hpos & (py2 <= gy2))

    # dist -> rho2, enclosing box
    d_c2 = dist / c2  # d(-dist)/dc2 = rho2 / c2^2
    d_px1 -= d_c2 * 2 * cw * (px1 <= gx1)
    d_px2 += d_c2 * 2 * cw * (px2 >= gx2)
    d_py1 -= d_c2 * 2 * ch * (py1 <= gy1)
    d_py2 += d_c2 * 2 * ch * (py2 >= gy2)
    d_px = -2.0 * (px - gx) / c2 + d_px1 + d_px2
    d_py = -2.0 * (py - gy) / c2 + d_py1 + d_py2
    d_pw = (d_px2 - d_px1) / 2 + d_area_p * ph
    d_ph = (d_py2 - d_py1) / 2 + d_area_p * pw

    # v -> atan(pw / ph)
    d_atan = d_v * (-2.0 * _V_SCALE * delta)
    r2 = pw**2 + ph**2
    d_pw += d_atan * ph / r2
    d_ph += d_atan * -pw / r2
    return value, np.stack([d_px, d_py, d_pw, d_ph], axis=1)


def bce_with_logits(z: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class LossParts:
    box: float
    obj: float
    cls: float
    total: float


def compute_loss(
    raw: Sequence[Tensor],
    targets: Sequence[AssignedTarget],
    spec: ModelSpec,
    box_weight: float = 0.05,
    obj_weight: float = 1.0,
    cls_weight: float = 0.5,
) -> tuple[Tensor, LossParts]:
    """Weighted sum of box (1 - CIoU), objectness and class losses.

    Objectness BCE runs over every anchor/cell of every scale, averaged per
    scale and combined with the fixed per-scale balance. Box and class terms
    are averaged over assigned targets; the class term is skipped for a
    single-class model.
    """
    check_raw(raw, spec)
    no = spec.outputs_per_anchor
    logits = [r.data.astype(np.float64).reshape(r.shape[0], 3, no, r.shape[2], r.shape[3]) for r in raw]
    grads = [np.zeros_like(z) for z in logits]

    obj_total = 0.0
    for si, z in enumerate(logits):
        t = np.zeros(z[:, :, 4].shape)
        for tg in targets:
            if tg.scale == si:
                t[tg.image_index, tg.anchor, tg.cell_y, tg.cell_x] = 1.0
        zo = z[:, :, 4]
        count = zo.size
        obj_total += OBJ_BALANCE[si] * bce_with_logits(zo, t).mean()
        grads[si][:, :, 4] = obj_weight * OBJ_BALANCE[si] * (expit(zo) - t) / count

    box_total = cls_total = 0.0
    n_t = len(targets)
    if n_t:
        idx = np.array([(tg.scale, tg.image_index, tg.anchor, tg.cell_y, tg.cell_x) for tg in targets])
        gt = np.array([tg.box for tg in targets], dtype=np.float64)
        stride = np.array(spec.strides, dtype=np.float64)[idx[:, 0]]
        anc = np.array(spec.anchors, dtype=np.float64)[idx[:, 0], idx[:, 2]]
        t_xywh = np.empty((n_t, 4))
        t_cls = np.empty((n_t, spec.num_classes))
        for k, (si, b, a, y, x) in enumerate(idx):
            t_xywh[k] = logits[si][b, a, 0:4, y, x]
            t_cls[k] = logits[si][b, a, 5:, y, x]
        s = expit(t_xywh)
        pred = np.empty_like(s)
        pred[:, 0] = (2 * s[:, 0] - 0.5 + idx[:, 4]) * stride
        pred[:, 1] = (2 * s[:, 1] - 0.5 + idx[:, 3]) * stride
        pred[:, 2] = (2 * s[:, 2]) ** 2 * anc[:, 0]
        pred[:, 3] = (2 * s[:, 3]) ** 2 * anc[:, 1]
        # a saturated size logit can underflow the width to exactly zero
        pred[:, 2:] = np.maximum(pred[:, 2:], _MIN_SIDE)
        value, d_pred = ciou_and_grad(pred, gt)
        box_total = float(np.mean(1.0 - value))

        ds = s * (1 - s)
        jac = np.stack(
            [2 * ds[:, 0] * stride, 2 * ds[:, 1] * stride, 8 * s[:, 2] * ds[:, 2] * anc[:, 0], 8 * s[:, 3] * ds[:, 3] * anc[:, 1]],
            axis=1,
        )
        d_txywh = -box_weight * d_pred * jac / n_t

        d_cls = np.zeros_like(t_cls)
        if spec.num_classes > 1:
            onehot = np.zeros_like(t_cls)
            onehot[np.arange(n_t), [tg.class_id for tg in targets]] = 1.0
            cls_total = float(bce_with_logits(t_cls, onehot).mean())
            d_cls = cls_weight * (expit(t_cls) - onehot) / t_cls.size

        for k, (si, b, a, y, x) in enumerate(idx):
            grads[si][b, a, 0:4, y, x] += d_txywh[k]
            grads[si][b, a, 5:, y, x] += d_cls[k]

    total = box_weight * box_total + obj_weight * obj_total + cls_weight * cls_total
    flat_grads = [g.reshape(r.shape).astype(r.data.dtype) for g, r in zip(grads, raw)]

    def _backward(g: np.ndarray):
        scale = g.reshape(-1)[0]
        return tuple(fg * scale for fg in flat_grads)

    loss = Tensor._from_op(np.array(total), tuple(raw), _backward)
    return loss, LossParts(box_total, float(obj_total), cls_total, float(total))
