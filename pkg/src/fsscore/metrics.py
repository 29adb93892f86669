"""Accuracy, sensitivity, specificity, ROC AUC and Pearson correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise MetricError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, predicted, labels) -> "ConfusionCounts":
        p = np.asarray(predicted).astype(bool)
        y = np.asarray(labels).astype(bool)
        return cls(int(np.sum(p & y)), int(np.sum(~p & ~y)), int(np.sum(p & ~y)), int(np.sum(~p & y)))


@dataclass(frozen=True)
class BinaryMetrics:
    """``None`` marks a metric whose denominator is zero."""

    accuracy: float | None
    sensitivity: float | None
    specificity: float | None

    @property
    def undefined(self) -> tuple[str, ...]:
        return tuple(k for k in ("accuracy", "sensitivity", "specificity") if getattr(self, k) is None)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def binary_metrics(c: ConfusionCounts) -> BinaryMetrics:
    if c.total == 0:
        raise MetricError("all confusion counts are zero")
    return BinaryMetrics(
        accuracy=(c.tp + c.tn) / c.total,
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
    )


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties between classes count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pcc(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise MetricError("vectors differ in length")
    if x.size < 2:
        raise MetricError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    den = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if den == 0:
        raise MetricError("zero variance")
    return float(np.sum(dx * dy) / den)
