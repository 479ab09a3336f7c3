"""Classification metrics."""
from __future__ import annotations

import numpy as np

from .errors import LengthMismatch


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def weighted_f1(y_true, y_pred, num_classes: int) -> float:
    """Support-weighted mean of per-class F1 scores.

    Classes absent from ``y_true`` carry zero weight; a class with
    precision + recall = 0 scores 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        return 0.0
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"labels must lie in [0, {num_classes})")
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return float((f1 * support).sum() / support.sum())


def majority_f1(y_true, num_classes: int) -> float:
    """Weighted F1 of always predicting the most frequent class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        return 0.0
    major = int(np.bincount(y_true, minlength=num_classes).argmax())
    return weighted_f1(y_true, np.full_like(y_true, major), num_classes)
