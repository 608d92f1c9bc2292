"""Image-level confusion metrics, ROC / PR curves and report files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import Detection
from .postprocess import Thresholds, detect_batch, iou

GATE = 0.5
UNDEFINED = "undefined"
METRIC_KEYS = ("sensitivity", "specificity", "precision", "recall", "accuracy", "f1", "roc_auc", "average_precision")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    recall: float | None
    accuracy: float | None
    f1: float | None
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    pr_points: list[tuple[float, float]] = field(default_factory=list)
    roc_auc: float | None = None
    average_precision: float | None = None

    def scalars(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in METRIC_KEYS}


def image_score(detections: Sequence[Detection]) -> float:
    return max((d.confidence for d in detections), default=0.0)


def confusion(scores: Sequence[float], labels: Sequence[bool], threshold: float = GATE) -> ConfusionCounts:
    """Counts with an image called positive iff its score is strictly above ``threshold``."""
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    if not scores:
        raise ValueError("confusion needs at least one image")
    pred = np.asarray(scores, dtype=np.float64) > threshold
    truth = np.asarray(labels, dtype=bool)
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def _ratio(num: int | float, den: int | float) -> float | None:
    return num / den if den > 0 else None


def scalar_metrics(counts: ConfusionCounts) -> MetricsReport:
    """Ratios from the confusion counts; a zero denominator yields ``None``."""
    sens = _ratio(counts.tp, counts.tp + counts.fn)
    spec = _ratio(counts.tn, counts.tn + counts.fp)
    prec = _ratio(counts.tp, counts.tp + counts.fp)
    acc = _ratio(counts.tp + counts.tn, counts.total)
    f1 = None
    if prec is not None and sens is not None and prec + sens > 0:
        f1 = 2 * prec * sens / (prec + sens)
    return MetricsReport(counts, sens, spec, prec, sens, acc, f1)


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> tuple[list[tuple[float, float]], float]:
    """(FPR, TPR) points from (0, 0) to (1, 1), one step per distinct score, and trapezoidal AUC."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if len(s) != len(y):
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = np.cumsum(~y)[ends]
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def match_detections(
    detections: Sequence[Detection],
    gts: Sequence[tuple[int, float, float, float, float]],
    iou_threshold: float = 0.5,
) -> tuple[list[bool], int]:
    """Greedy matching in the given (confidence-descending) order.

    ``gts`` are ``(class_id, x_min, y_min, x_max, y_max)``. Each detection takes
    the unconsumed same-class box of highest IoU if that IoU reaches the
    threshold. Returns per-detection TP flags and the unmatched-gt count.
    """
    used = [False] * len(gts)
    flags = []
    for d in detections:
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if used[j] or g[0] != d.class_id:
                continue
            ov = iou(d.corners(), g[1:])
            if ov >= best_iou and (best < 0 or ov > best_iou):
                best, best_iou = j, ov
        if best >= 0:
            used[best] = True
        flags.append(best >= 0)
    return flags, used.count(False)


def pr_curve(confidences: Sequence[float], tp_flags: Sequence[bool], total_gt: int) -> tuple[list[tuple[float, float]], float]:
    """(recall, precision) after each ranked detection and all-point interpolated AP."""
    if total_gt < 1:
        raise ValueError("pr_curve needs at least one ground-truth box")
    if len(confidences) != len(tp_flags):
        raise ValueError(f"{len(confidences)} confidences but {len(tp_flags)} flags")
    if len(confidences) == 0:
        return [], 0.0
    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    tp = np.asarray(tp_flags, dtype=bool)[order]
    ctp = np.cumsum(tp)
    recall = ctp / total_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    ap = float(np.sum(steps * envelope))
    return list(zip(recall.tolist(), precision.tolist())), ap


@dataclass
class ImageResult:
    image_id: str
    detections: list[Detection]
    gts: list[tuple[int, float, float, float, float]]

    @property
    def positive(self) -> bool:
        return bool(self.gts)


def evaluate_results(results: Sequence[ImageResult], gate: float = GATE, match_iou: float = 0.5) -> MetricsReport:
    scores = [image_score(r.detections) for r in results]
    labels = [r.positive for r in results]
    report = scalar_metrics(confusion(scores, labels, gate))
    if any(labels) and not all(labels):
        report.roc_points, report.roc_auc = roc_curve(scores, labels)
    confs, flags = [], []
    total_gt = 0
    for r in results:
        dets = sorted(r.detections, key=lambda d: -d.confidence)
        f, _ = match_detections(dets, r.gts, match_iou)
        confs.extend(d.confidence for d in dets)
        flags.extend(f)
        total_gt += len(r.gts)
    if total_gt:
        report.pr_points, report.average_precision = pr_curve(confs, flags, total_gt)
    return report


def _json_value(v):
    return UNDEFINED if v is None else v


def metrics_json(report: MetricsReport) -> str:
    payload = {k: _json_value(v) for k, v in report.scalars().items()}
    c = report.counts
    payload.update(tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn)
    return json.dumps(payload, indent=2) + "\n"


def curve_csv(points: Sequence[tuple[float, float]], header: tuple[str, str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for x, y in points:
        writer.writerow((repr(float(x)), repr(float(y))))
    return buf.getvalue()


def read_curve_csv(path: str | Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(float(a), float(b)) for a, b in rows[1:]]


def emit_report(report: MetricsReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(metrics_json(report))
    (out / "roc.csv").write_text(curve_csv(report.roc_points, ("fpr", "tpr")))
    (out / "pr.csv").write_text(curve_csv(report.pr_points, ("recall", "precision")))


# Detections below this confidence are dropped before scoring. It sits far
# below the 0.5 gate so the ROC and PR sweeps see the full score range, while
# image-level counts are unchanged (a score above 0.5 survives either floor).
CANDIDATE_FLOOR = 0.001


def sample_ground_truth(sample) -> list[tuple[int, float, float, float, float]]:
    """Ground-truth boxes of a :class:`~noduledet.data.Sample` in original-image pixels."""
    out = []
    for b in sample.boxes:
        x1, y1, x2, y2 = b.corners()
        out.append((b.class_id, x1 * sample.width, y1 * sample.height, x2 * sample.width, y2 * sample.height))
    return out


def evaluate_detector(detector, samples, gate: float = GATE, nms_iou: float = 0.45,
                      match_iou: float = 0.5, batch_size: int = 8) -> tuple[MetricsReport, list[ImageResult]]:
    """Run detection over ``samples`` and score it against their annotations."""
    thresholds = Thresholds(CANDIDATE_FLOOR, nms_iou)
    results = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        for s, dets in zip(chunk, detect_batch(detector, chunk, thresholds)):
            results.append(ImageResult(s.image_id, dets, sample_ground_truth(s)))
    return evaluate_results(results, gate, match_iou), results
