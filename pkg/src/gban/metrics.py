"""Weighted / unweighted accuracy from a confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalMetrics:
    wa: float
    ua: float
    confusion: np.ndarray  # rows: true class, columns: predicted class


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> EvalMetrics:
    """WA = trace / total; UA = mean recall over classes that have true samples."""
    cm = np.asarray(cm)
    total = cm.sum()
    wa = float(np.trace(cm) / total) if total else 0.0
    support = cm.sum(axis=1)
    present = support > 0
    ua = float(np.mean(np.diag(cm)[present] / support[present])) if present.any() else 0.0
    return EvalMetrics(wa, ua, cm)


def predict(probs: np.ndarray) -> np.ndarray:
    """Argmax per row; the lowest class index wins ties."""
    return np.argmax(np.asarray(probs), axis=-1)
