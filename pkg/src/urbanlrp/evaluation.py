"""Confusion matrices and per-class precision / recall."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass
class Evaluation:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    empty_prediction: np.ndarray
    """True where a class was never predicted, so its precision was set to 0."""

    @property
    def support(self):
        return self.confusion.sum(axis=1)


def confusion_matrix(y_true, y_pred, n_classes=10):
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def metrics_from_confusion(m):
    m = np.asarray(m)
    total = m.sum()
    if total == 0:
        raise ParameterError("confusion matrix is empty")
    diag = np.diag(m).astype(np.float64)
    cols = m.sum(axis=0)
    rows = m.sum(axis=1)
    precision = np.divide(diag, cols, out=np.zeros_like(diag), where=cols > 0)
    recall = np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)
    return Evaluation(m, float(diag.sum() / total), precision, recall, cols == 0)


def evaluate(model, images, labels, n_classes=None, batch_size=64):
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ParameterError("cannot evaluate an empty split")
    n_classes = model.n_classes if n_classes is None else n_classes
    pred = model.predict(images, batch_size).argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(labels, pred, n_classes))


def normalize_confusion(m):
    """Row-stochastic copy; all-zero rows stay zero."""
    m = np.asarray(m, dtype=np.float64)
    rows = m.sum(axis=1, keepdims=True)
    return np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)


def write_confusion_csv(path, m, class_names, normalized=False):
    data = normalize_confusion(m) if normalized else np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted", *class_names])
        for name, row in zip(class_names, data):
            w.writerow([name, *(repr(float(v)) if normalized else int(v) for v in row)])


def write_metrics_csv(path, result, class_names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "support", "precision_undefined"])
        for i, name in enumerate(class_names):
            w.writerow([name, repr(float(result.precision[i])), repr(float(result.recall[i])),
                        int(result.support[i]), int(result.empty_prediction[i])])
        w.writerow(["accuracy", repr(result.accuracy), "", int(result.confusion.sum()), ""])
