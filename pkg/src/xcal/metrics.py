"""Task metrics for scoring quantized models."""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import DataError


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DataError(f"logits {logits.shape} and labels {labels.shape} do not match")
    if logits.shape[0] == 0:
        raise DataError("no samples to score")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DataError(f"label out of range [0, {logits.shape[1]})")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def dice(p: np.ndarray, g: np.ndarray) -> float:
    """``2|p & g| / (|p| + |g|)`` for binary masks; 1.0 when both are empty."""
    p = np.asarray(p)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise DataError(f"mask shapes differ: {p.shape} vs {g.shape}")
    for m in (p, g):
        if not np.isin(m, (0, 1)).all():
            raise DataError("dice expects binary masks with values in {0, 1}")
    p = p.astype(bool)
    g = g.astype(bool)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise DataError("prediction and ground truth sizes differ")
    keep = np.ones(gt.shape, dtype=bool) if ignore_index is None else gt != ignore_index
    pred, gt = pred[keep], gt[keep]
    for arr in (pred, gt):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"class index outside [0, {num_classes})")
    return np.bincount(gt * num_classes + pred, minlength=num_classes**2).reshape(num_classes, num_classes)


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int | None = None) -> float:
    """Mean IoU over classes present in prediction or ground truth."""
    cm = confusion_matrix(pred, gt, num_classes, ignore_index)
    if cm.sum() == 0:
        raise DataError("mIoU undefined: every pixel is ignored")
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    return float(np.mean(inter[present] / union[present]))


def format_report(rows) -> str:
    """CSV ``metric,value`` text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in rows:
        writer.writerow([name, f"{value:.6f}"])
    return buf.getvalue()
