"""Classification metrics: confusion matrix, per-class P/R/F1, macro F1, top-k accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


@dataclass
class ClassReport:
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_f1: float
    top1: float
    top5: float
    confusion: list[list[int]]
    classes_in_macro: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(vars(self))


def classification_report(truth, probs: np.ndarray) -> ClassReport:
    """Metrics for integer ``truth`` against per-class scores ``probs`` (n, C).

    Macro F1 averages per-class F1 over the classes that occur in the truth or
    in the predictions; a class absent from both has no defined F1.
    """
    truth = np.asarray(truth, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    n, C = probs.shape if probs.ndim == 2 else (0, 0)
    pred = probs.argmax(axis=1) if n else np.zeros(0, dtype=np.int64)
    cm = confusion_matrix(truth, pred, C)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    present = np.flatnonzero((cm.sum(axis=0) + cm.sum(axis=1)) > 0)
    # sequential sum keeps the average independent of numpy's pairwise summation
    macro = sum(f1[present].tolist()) / present.size if present.size else 0.0
    if n:
        order = np.argsort(-probs, axis=1, kind="stable")
        top1 = float(np.mean(order[:, 0] == truth))
        top5 = float(np.mean((order[:, :5] == truth[:, None]).any(axis=1)))
    else:
        top1 = top5 = 0.0
    return ClassReport(precision.tolist(), recall.tolist(), f1.tolist(), cm.sum(axis=1).tolist(),
                       macro, top1, top5, cm.tolist(), present.tolist())


@dataclass
class MetricsReport:
    activity: ClassReport
    affordance: ClassReport | None

    def to_dict(self) -> dict:
        return {"activity": self.activity.to_dict(),
                "affordance": None if self.affordance is None else self.affordance.to_dict()}

    def table(self, activity_names=None, affordance_names=None) -> str:
        lines = []
        for title, rep, names in (("sub-activity", self.activity, activity_names),
                                  ("affordance", self.affordance, affordance_names)):
            if rep is None:
                continue
            lines.append(f"{title}: macro F1 {rep.macro_f1:.4f}  top-1 {rep.top1:.4f}  top-5 {rep.top5:.4f}")
            lines.append(f"  {'class':<14}{'P':>8}{'R':>8}{'F1':>8}{'n':>6}")
            for c in range(len(rep.f1)):
                name = names[c] if names and c < len(names) else str(c)
                lines.append(f"  {name:<14}{rep.precision[c]:>8.3f}{rep.recall[c]:>8.3f}"
                             f"{rep.f1[c]:>8.3f}{rep.support[c]:>6d}")
        return "\n".join(lines)
