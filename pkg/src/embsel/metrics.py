"""Evaluation metrics with exact tie handling, plus fold-level statistics.

AUROC uses the Mann-Whitney midrank formulation, AUPR is average precision
with equal scores collapsed into a single threshold step, and the paired
t-test gets its two-sided p-value from the regularized incomplete beta
function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc


class MetricError(Exception):
    """Metric is undefined for the given inputs."""


@dataclass
class MetricReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray
    auroc: float | None = None
    aupr: float | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "auroc": self.auroc,
            "aupr": self.aupr,
            "confusion": self.confusion.tolist(),
        }


@dataclass
class FoldSummary:
    per_fold: list = field(default_factory=list)
    mean: float = 0.0
    sd: float = 0.0

    def to_dict(self) -> dict:
        return {"per_fold": list(self.per_fold), "mean": self.mean, "sd": self.sd}


def midranks(x) -> np.ndarray:
    """Ranks 1..n with ties sharing the mean of their covered positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the midrank Mann-Whitney statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores/labels length mismatch")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs at least one positive and one negative")
    ranks = midranks(scores)
    r_pos = float(ranks[pos].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aupr(scores, labels) -> float:
    """Average precision; equal scores form a single threshold step."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores/labels length mismatch")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricError("AUPR needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = fp = 0
    prev_recall = 0.0
    ap = 0.0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        tp += int((y[i : j + 1] == 1).sum())
        fp += (j - i + 1) - int((y[i : j + 1] == 1).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return ap


def f1_report(predictions, labels) -> MetricReport:
    """Accuracy, macro/weighted F1 and the confusion matrix (rows = true)."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise MetricError("predictions/labels length mismatch")
    if predictions.size == 0:
        raise MetricError("empty inputs")
    if predictions.min() < 0 or labels.min() < 0:
        raise MetricError("negative class index")
    n_classes = int(max(predictions.max(), labels.max())) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    n = labels.size
    accuracy = float(np.trace(confusion)) / n
    f1 = np.zeros(n_classes)
    true_counts = confusion.sum(axis=1)
    pred_counts = confusion.sum(axis=0)
    for c in range(n_classes):
        tp = confusion[c, c]
        denom = true_counts[c] + pred_counts[c]
        # 0/0 convention: a class never true and never predicted scores 0
        f1[c] = 2.0 * tp / denom if denom > 0 else 0.0
    macro = float(f1.mean())
    weighted = float((true_counts / n) @ f1)
    return MetricReport(
        accuracy=accuracy,
        macro_f1=macro,
        weighted_f1=weighted,
        confusion=confusion,
    )


def fold_summary(values) -> FoldSummary:
    """Mean and sample standard deviation (n-1 denominator) over folds."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise MetricError("fold summary needs at least two values")
    arr = np.asarray(values)
    return FoldSummary(
        per_fold=values,
        mean=float(arr.mean()),
        sd=float(arr.std(ddof=1)),
    )


def paired_ttest(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on per-fold values.

    Degenerate cases: zero-variance differences give (0, 1) when the mean
    difference is also zero, and a signed infinite t with p = 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired t-test needs equal-length vectors")
    k = a.size
    if k < 2:
        raise MetricError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(k))
    df = k - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, p
