"""Top-k accuracy, per-level F1 scores and the combined report."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np


def topk_accuracy(logits, labels, k: int = 1) -> float:
    """Percent of rows whose label is among the k largest logits (ties favour lower indices)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if not 1 <= k <= c:
        raise ValueError(f"k={k} outside [1, {c}]")
    if n == 0:
        return 0.0
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return 100.0 * float((top == labels[:, None]).any(axis=1).mean())


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """cm[i, j] counts samples of true class i predicted as j."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class in [0, 1]; classes with no true and no predicted samples score 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    return np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1.0), 0.0)


def macro_f1(cm: np.ndarray) -> float:
    return float(per_class_f1(cm).mean())


def micro_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.trace(cm)
    fp_plus_fn = 2.0 * (cm.sum() - tp)
    return float(2.0 * tp / (2.0 * tp + fp_plus_fn)) if cm.sum() else 0.0


def body_predictions(probs: np.ndarray, action_to_body: Sequence[int]) -> np.ndarray:
    """Body-level prediction = family with the largest summed action probability."""
    action_to_body = np.asarray(action_to_body, dtype=np.int64)
    fam = np.zeros((probs.shape[0], action_to_body.max() + 1))
    for a, f in enumerate(action_to_body):
        fam[:, f] += probs[:, a]
    return np.argmax(fam, axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MetricsReport:
    top1: float
    top5: float
    levels: Dict[str, Dict[str, float]]
    f1_mean: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    n: int = 0
    loss: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1, "top5": self.top5, "f1_mean": self.f1_mean, "n": self.n, "loss": self.loss,
            "levels": self.levels, "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.tolist(), **self.extra,
        }


def compute_report(logits, labels, action_to_body: Optional[Sequence[int]] = None, body_labels=None,
                   top_k: int = 5) -> MetricsReport:
    """Scores action-level logits; body-level scores are derived through ``action_to_body``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    pred = np.argmax(logits, axis=1)
    cm = confusion_matrix(labels, pred, c)
    levels = {"action": {"macro_f1": 100.0 * macro_f1(cm), "micro_f1": 100.0 * micro_f1(cm)}}
    if action_to_body is not None:
        a2b = np.asarray(action_to_body, dtype=np.int64)
        true_body = a2b[labels] if body_labels is None else np.asarray(body_labels, dtype=np.int64)
        body_pred = body_predictions(softmax(logits), a2b)
        bcm = confusion_matrix(true_body, body_pred, int(a2b.max()) + 1)
        levels["body"] = {"macro_f1": 100.0 * macro_f1(bcm), "micro_f1": 100.0 * micro_f1(bcm)}
    f1s = [v for lvl in levels.values() for v in lvl.values()]
    return MetricsReport(
        top1=topk_accuracy(logits, labels, 1), top5=topk_accuracy(logits, labels, min(top_k, c)),
        levels=levels, f1_mean=float(np.mean(f1s)), per_class_f1=100.0 * per_class_f1(cm), confusion=cm, n=n,
    )
