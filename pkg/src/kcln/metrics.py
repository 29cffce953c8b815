"""Classification metrics: micro/macro F1, binary F1 and area under the PR curve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-d and of equal length")
    if y_true.size == 0:
        raise ValueError("empty input")
    return y_true, y_pred


def confusion_matrix(y_true, y_pred, n_labels: int) -> np.ndarray:
    """``cm[t, p]`` counts examples with true label ``t`` predicted as ``p``."""
    y_true, y_pred = _check(y_true, y_pred)
    if y_true.min() < 0 or y_pred.min() < 0 or max(y_true.max(), y_pred.max()) >= n_labels:
        raise ValueError("label index out of range")
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def micro_f1(y_true, y_pred) -> float:
    """F1 over pooled counts; equals accuracy for single-label multi-class data."""
    y_true, y_pred = _check(y_true, y_pred)
    tp = int(np.sum(y_true == y_pred))
    wrong = y_true.size - tp
    # every wrong prediction is one false positive and one false negative
    return _f1(tp, wrong, wrong)


def macro_f1(y_true, y_pred, n_labels: int) -> float:
    """Unweighted mean of per-class F1 over ``0..n_labels-1``.

    A class absent from both truth and predictions scores 0.
    """
    cm = confusion_matrix(y_true, y_pred, n_labels)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    return float(np.mean([_f1(tp[c], fp[c], fn[c]) for c in range(n_labels)]))


def binary_f1(y_true, y_pred) -> float:
    y_true, y_pred = _check(y_true, y_pred)
    if not (np.isin(y_true, (0, 1)).all() and np.isin(y_pred, (0, 1)).all()):
        raise ValueError("binary labels must be 0 or 1")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    return _f1(tp, fp, fn)


def pr_curve(y_true, scores) -> tuple[np.ndarray, np.ndarray]:
    """Recall and precision at every distinct score threshold, highest first.

    Tied scores enter together. Thresholds admitting no true positive are
    dropped and the curve is anchored at recall 0 with the precision of its
    first remaining point.
    """
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1 or y.size == 0:
        raise ValueError("y_true and scores must be non-empty 1-d arrays of equal length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("binary labels must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AUC-PR needs at least one positive example")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), y.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    keep = tp > 0
    recall = tp[keep] / n_pos
    precision = tp[keep] / (tp[keep] + fp[keep])
    return np.r_[0.0, recall], np.r_[precision[0], precision]


def auc_pr(y_true, scores) -> float:
    """Trapezoidal area under the precision-recall curve of :func:`pr_curve`."""
    recall, precision = pr_curve(y_true, scores)
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest label index."""
    return np.argmax(np.asarray(probs), axis=1)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    confusion: np.ndarray
    n_evaluated: int
    task: str = "multiclass"

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_evaluated": self.n_evaluated,
            "metrics": dict(self.metrics),
            "confusion": self.confusion.tolist(),
        }


def evaluate_probs(probs, labels, ids, n_labels: int, task: str = "multiclass") -> EvalReport:
    """Metrics over entities ``ids`` given class probabilities and true labels."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("nothing to evaluate: empty test split")
    if task not in ("binary", "multiclass"):
        raise ValueError(f"unknown task {task!r}")
    if task == "binary" and n_labels != 2:
        raise ValueError(f"binary task needs exactly 2 labels, graph has {n_labels}")
    probs = np.asarray(probs)[ids]
    y_true = np.asarray(labels)[ids]
    y_pred = predict_labels(probs)
    cm = confusion_matrix(y_true, y_pred, n_labels)
    metrics = {"micro_f1": micro_f1(y_true, y_pred), "macro_f1": macro_f1(y_true, y_pred, n_labels)}
    if task == "binary":
        metrics["f1"] = binary_f1(y_true, y_pred)
        if y_true.any():
            metrics["auc_pr"] = auc_pr(y_true, probs[:, 1])
    return EvalReport(metrics, cm, int(ids.size), task)


def evaluate(trace, g, split, task: str = "multiclass", labels=None) -> EvalReport:
    """Evaluate a forward trace on the split's test entities (``labels`` overrides ``g.labels``)."""
    if trace.probs.shape[0] != g.n_entities:
        raise ValueError("trace does not cover every entity")
    return evaluate_probs(trace.probs, g.labels if labels is None else labels, split.test_ids, g.n_labels, task)
