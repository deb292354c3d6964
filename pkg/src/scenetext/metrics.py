"""Segmentation and classifier evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .labelmap import LabelMap

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[i, j]`` = items whose true class is ``i`` and predicted class is ``j``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be nonnegative")
        c = c.astype(np.int64, copy=True)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_json(self) -> list[list[int]]:
        return self.counts.tolist()


@dataclass(frozen=True, eq=False)
class ProbabilityField:
    probs: np.ndarray  # (height, width, k)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] < 1:
            raise ValueError(f"probability field must have shape (h, w, k), got {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("per-pixel probabilities must sum to 1")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.probs.shape[2]

    @classmethod
    def one_hot(cls, m: LabelMap, k: int) -> "ProbabilityField":
        return cls(np.eye(k)[m.cells])


def cross_entropy(pred: ProbabilityField, truth: LabelMap) -> float:
    if pred.probs.shape[:2] != truth.cells.shape:
        raise ValueError(f"dimension mismatch: {pred.probs.shape[:2]} vs {truth.cells.shape}")
    if truth.cells.max() >= pred.k:
        raise ValueError("truth class outside the predicted class range")
    q = np.take_along_axis(pred.probs, truth.cells[..., None], axis=2)[..., 0]
    q = np.clip(q, PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(q)))


def confusion(pred: LabelMap, truth: LabelMap, k: int) -> ConfusionMatrix:
    if pred.cells.shape != truth.cells.shape:
        raise ValueError(f"dimension mismatch: {pred.cells.shape} vs {truth.cells.shape}")
    top = max(int(pred.cells.max()), int(truth.cells.max()))
    if top >= k:
        raise ValueError(f"class {top} out of range for k={k}")
    idx = truth.cells.ravel() * k + pred.cells.ravel()
    return ConfusionMatrix(np.bincount(idx, minlength=k * k).reshape(k, k))


def confusion_from_labels(pred: Sequence[int], truth: Sequence[int], k: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size and max(pred.max(), truth.max()) >= k:
        raise ValueError(f"label out of range for k={k}")
    return ConfusionMatrix(np.bincount(truth * k + pred, minlength=k * k).reshape(k, k))


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; ``nan`` where the class is absent from prediction and truth."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(axis=1) + c.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), np.nan)


def miou(cm: ConfusionMatrix, policy: str = "exclude_absent") -> float:
    if cm.k < 1:
        raise ValueError("mIoU needs at least one class")
    iou = per_class_iou(cm)
    present = ~np.isnan(iou)
    if not present.any():
        raise ValueError("mIoU undefined: every class is absent from prediction and truth")
    if policy == "exclude_absent":
        return float(iou[present].mean())
    if policy == "include_absent":
        return float(np.where(present, iou, 0.0).mean())
    raise ValueError(f"unknown absent-class policy {policy!r}")


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    s = precision + recall
    return np.divide(2 * precision * recall, s, out=np.zeros_like(tp), where=s > 0)


def f1_macro(cm: ConfusionMatrix) -> float:
    if cm.k == 0 or cm.total == 0:
        raise ValueError("F1 of an empty confusion matrix is undefined")
    return float(f1_per_class(cm).mean())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts) / cm.total)


def mape(model: Sequence[float], reference: Sequence[float], denominator: str = "reference") -> float:
    """Mean absolute percentage error, in percent.

    ``denominator`` picks which series the absolute error is relative to.
    """
    a = np.asarray(model, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("mape needs two equal-length, non-empty sequences")
    if denominator == "reference":
        denom = b
    elif denominator == "model":
        denom = a
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    if np.any(denom == 0):
        raise ValueError("mape denominator contains a zero")
    return float(100.0 * np.mean(np.abs(a - b) / np.abs(denom)))


def rmse_points(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if a.shape != b.shape or a.shape[0] == 0:
        raise ValueError("rmse_points needs two equal-length, non-empty point sequences")
    return math.sqrt(float(np.mean(np.sum((a - b) ** 2, axis=1))))


def metrics_report(cm: ConfusionMatrix, ce: float | None = None, policy: str = "exclude_absent") -> dict:
    iou = per_class_iou(cm)
    return {
        "miou": miou(cm, policy),
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "cross_entropy": ce,
        "f1_macro": f1_macro(cm),
    }
