"""Detection metrics and boxplot summaries."""

from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    """Malicious is the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def n(self):
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, predicted, truth):
        pred = np.asarray(predicted).astype(bool)
        true = np.asarray(truth).astype(bool)
        if pred.shape != true.shape:
            raise ValidationError("predicted and truth labels differ in length")
        return cls(int((pred & true).sum()), int((pred & ~true).sum()),
                   int((~pred & true).sum()), int((~pred & ~true).sum()))

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def metrics(c):
    """``(precision, recall, accuracy, f1)``; zero denominators give 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    accuracy = (c.tp + c.tn) / c.n if c.n else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, accuracy, f1


def box_stats(values):
    """Quartiles (linear interpolation) and whiskers at Q1 - 1.5 IQR, Q3 + 1.5 IQR."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("box_stats needs at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    return {"q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_low": float(q1 - 1.5 * iqr), "whisker_high": float(q3 + 1.5 * iqr)}
