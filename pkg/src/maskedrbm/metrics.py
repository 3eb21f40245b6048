"""Reconstruction and classification scores over masked entries, with
across-repeat aggregation."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """The requested score has no defined value on this input."""


def rmse(ground_truth, imputed, mask) -> float:
    """Root mean squared error over the cells flagged by ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise UndefinedMetricError("no masked entries for RMSE")
    err = np.asarray(ground_truth, dtype=np.float64)[mask] \
        - np.asarray(imputed, dtype=np.float64)[mask]
    return float(np.sqrt(np.mean(np.abs(err) ** 2)))


def _pool(x, mask):
    x = np.asarray(x)
    if mask is None:
        return x.ravel()
    return x[np.asarray(mask, dtype=bool)]


def micro_auc(scores, truth, mask=None) -> float:
    """Probability that a positive outranks a negative over the pooled
    (instance, label) entries; ties count one half."""
    s = _pool(scores, mask).astype(np.float64)
    y = _pool(truth, mask).astype(np.float64) > 0.5
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("micro AUC needs both classes in the pool")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def hamming_accuracy(predicted, truth, mask=None) -> float:
    """Fraction of masked label entries predicted exactly."""
    p = _pool(predicted, mask)
    t = _pool(truth, mask)
    if len(p) == 0:
        raise UndefinedMetricError("no masked label entries")
    return float(np.mean((p > 0.5) == (t > 0.5)))


def _class_indices(truth) -> np.ndarray:
    truth = np.asarray(truth)
    return np.argmax(truth, axis=-1) if truth.ndim == 2 else truth.astype(np.intp)


def averaged_auc(scores, truth, mask=None) -> float:
    """Macro average of one-vs-rest AUCs over the classes present."""
    scores = np.asarray(scores, dtype=np.float64)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        scores = scores[keep]
        truth = np.asarray(truth)[keep]
    classes = _class_indices(truth)
    present = np.unique(classes)
    if len(present) < 2:
        raise UndefinedMetricError("averaged AUC needs at least two classes")
    aucs = [micro_auc(scores[:, k], classes == k) for k in present]
    return float(np.mean(aucs))


def accuracy_multiclass(predicted, truth, mask=None) -> float:
    """Fraction of masked instances whose predicted class is correct."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        predicted = predicted[keep]
        truth = truth[keep]
    if len(predicted) == 0:
        raise UndefinedMetricError("no masked instances")
    return float(np.mean(_class_indices(predicted) == _class_indices(truth)))


METRIC_NAMES = ("rmse", "rmse_standardized", "micro_auc", "hamming_accuracy",
                "averaged_auc", "accuracy")


@dataclass
class MetricsReport:
    """Scores of a single repeat; fields are None when not applicable."""

    rmse: Optional[float] = None
    rmse_standardized: Optional[float] = None
    micro_auc: Optional[float] = None
    hamming_accuracy: Optional[float] = None
    averaged_auc: Optional[float] = None
    accuracy: Optional[float] = None

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}


@dataclass
class AggregateReport:
    """Across-repeat mean and sample standard deviation per metric."""

    n_repeats: int
    stats: dict[str, tuple[float, Optional[float], int]]  # mean, std, n

    def mean(self, metric: str) -> Optional[float]:
        entry = self.stats.get(metric)
        return entry[0] if entry else None


def aggregate(reports: list[MetricsReport]) -> AggregateReport:
    """Per-metric sample mean and, for more than one value, standard deviation."""
    if not reports:
        raise ValueError("nothing to aggregate")
    stats = {}
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            continue
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else None
        stats[name] = (mean, std, len(values))
    return AggregateReport(n_repeats=len(reports), stats=stats)
