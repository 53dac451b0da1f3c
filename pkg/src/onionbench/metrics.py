"""Evaluation metrics derived purely from an integer confusion matrix.

Per-class scores use single-division forms (TP/row, TP/col, 2TP/(row+col)) so
each float result is the correctly rounded value of the underlying rational.
Zero-denominator cases score 0 but stay in the macro averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, LabelError, ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square int64 count matrix; rows are true classes, columns predictions."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", c)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ShapeError(f"confusion matrix must be square and non-empty, got {c.shape}")
        if (c < 0).any():
            raise ShapeError("confusion matrix counts must be non-negative")

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, truths, predictions) -> ConfusionMatrix:
    """Return a new matrix with the (truth, prediction) pairs added.

    Associative over chunks: accumulating a stream in any split gives the same
    matrix as one pass.
    """
    t = np.asarray(truths, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ShapeError(f"truths {t.shape} and predictions {p.shape} must be equal-length vectors")
    c = cm.num_classes
    if t.size and (t.min() < 0 or t.max() >= c or p.min() < 0 or p.max() >= c):
        raise LabelError(f"labels outside [0, {c})")
    counts = cm.counts.copy()
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class MetricsReport:
    per_class_accuracy: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    overall_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "overall_accuracy": self.overall_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            per_class_accuracy=np.asarray(d["per_class_accuracy"], dtype=np.float64),
            per_class_precision=np.asarray(d["per_class_precision"], dtype=np.float64),
            per_class_recall=np.asarray(d["per_class_recall"], dtype=np.float64),
            per_class_f1=np.asarray(d["per_class_f1"], dtype=np.float64),
            overall_accuracy=float(d["overall_accuracy"]),
            macro_precision=float(d["macro_precision"]),
            macro_recall=float(d["macro_recall"]),
            macro_f1=float(d["macro_f1"]),
            sample_count=int(d["sample_count"]),
        )


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    mask = den > 0
    np.divide(num, den, out=out, where=mask)
    return out


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Compute all scores in one place from the matrix alone."""
    if cm.total == 0:
        raise EvaluationError("cannot score an empty confusion matrix")
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)   # = TP + FN, true support
    col = counts.sum(axis=0).astype(np.float64)   # = TP + FP, predicted support
    accuracy = _safe_div(tp, row)
    precision = _safe_div(tp, col)
    recall = _safe_div(tp, row)
    f1 = _safe_div(2.0 * tp, row + col)           # == 2PR/(P+R) with 0/0 -> 0
    return MetricsReport(
        per_class_accuracy=accuracy,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        overall_accuracy=float(np.trace(counts) / cm.total),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        sample_count=cm.total,
    )


def per_class_table(rep: MetricsReport, names) -> list[tuple[str, str, str]]:
    """Display rows (class, accuracy, F1) rounded to 2 decimals."""
    if len(names) != rep.per_class_accuracy.size:
        raise ShapeError(f"{len(names)} names for {rep.per_class_accuracy.size} classes")
    return [(str(n), f"{a:.2f}", f"{f:.2f}")
            for n, a, f in zip(names, rep.per_class_accuracy, rep.per_class_f1)]


def coarsen_confusion(cm: ConfusionMatrix, keep_index: int) -> ConfusionMatrix:
    """Collapse to 2x2: class ``keep_index`` vs. everything else pooled.

    Pooling moves between-rest confusions onto the rest diagonal, so the kept
    class's accuracy is unchanged and overall accuracy cannot drop.
    """
    c = cm.num_classes
    if not 0 <= keep_index < c:
        raise LabelError(f"keep_index {keep_index} outside [0, {c})")
    keep = cm.counts[keep_index, keep_index]
    keep_to_rest = cm.counts[keep_index].sum() - keep
    rest_to_keep = cm.counts[:, keep_index].sum() - keep
    rest_to_rest = cm.total - keep - keep_to_rest - rest_to_keep
    out = np.array([[keep, keep_to_rest], [rest_to_keep, rest_to_rest]], dtype=np.int64)
    return ConfusionMatrix(out)


def minority_mask(counts) -> np.ndarray:
    """True for classes whose count is strictly below the mean count."""
    c = np.asarray(counts, dtype=np.float64)
    return c < c.mean()


def minority_mean_f1(rep: MetricsReport, counts) -> float:
    mask = minority_mask(counts)
    if not mask.any():
        raise EvaluationError("no class lies below the mean count")
    return float(np.mean(rep.per_class_f1[mask]))
