"""Classification metrics over masked node sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    balanced_accuracy: float
    macro_f1: float
    accuracy: float
    per_class_recall: tuple
    support: tuple

    def as_dict(self):
        return asdict(self)


def confusion_matrix(pred, truth, num_classes):
    """``cm[t, p]`` counts nodes with true class ``t`` predicted as ``p``."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    flat = np.bincount(truth * num_classes + pred, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


def evaluate(pred, truth, idx, num_classes) -> MetricReport:
    """Balanced accuracy, macro-F1 and accuracy of ``pred`` against ``truth`` on ``idx``.

    Balanced accuracy averages recall over classes that occur in
    ``truth[idx]``. Macro-F1 averages over classes occurring in either the
    predictions or the truth, with F1 taken as 0 when precision + recall = 0.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty node set")
    p = np.asarray(pred, dtype=np.int64)[idx]
    t = np.asarray(truth, dtype=np.int64)[idx]
    cm = confusion_matrix(p, t, num_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros(num_classes), where=present)
    precision = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(num_classes), where=denom > 0)
    active = present | (predicted > 0)
    return MetricReport(
        balanced_accuracy=float(recall[present].mean()),
        macro_f1=float(f1[active].mean()),
        accuracy=float(tp.sum() / idx.size),
        per_class_recall=tuple(float(r) for r in recall),
        support=tuple(int(s) for s in support),
    )
