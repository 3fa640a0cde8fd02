"""Classification metrics, effect sizes, exact Spearman test and fold aggregation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

Z95 = 1.96
SPEARMAN_MAX_N = 10


class StatsError(ValueError):
    pass


@dataclass
class FoldReport:
    participant_id: str
    f1_weighted: float
    precision_weighted: float
    recall_weighted: float
    auroc: float
    predictions: list = field(default_factory=list)  # (utterance_id, score, label)
    feature_set: str | None = None

    METRICS = ("f1_weighted", "precision_weighted", "recall_weighted", "auroc")

    def metric(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class EffectSizeResult:
    d: float
    ci_low: float
    ci_high: float
    n0: int
    n1: int
    label: str


@dataclass
class MetricSummary:
    mean: float
    sd: float
    median: float
    n: int
    sd_defined: bool = True


@dataclass
class FoldAggregate:
    metrics: dict  # name -> MetricSummary


# -- classification --------------------------------------------------------


def confusion_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Support-weighted precision, recall and F1 for predictions ``score >= threshold``.

    A class that is never predicted gets precision 0; classes absent from
    ``labels`` carry zero weight.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0 or scores.shape != labels.shape:
        raise StatsError("scores and labels must be non-empty and the same length")
    pred = (scores >= threshold).astype(int)
    n = labels.size
    out = {"precision_weighted": 0.0, "recall_weighted": 0.0, "f1_weighted": 0.0}
    per_class = {}
    for c in (0, 1):
        tp = int(np.sum((pred == c) & (labels == c)))
        n_pred = int(np.sum(pred == c))
        support = int(np.sum(labels == c))
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class[c] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
        w = support / n
        out["precision_weighted"] += w * precision
        out["recall_weighted"] += w * recall
        out["f1_weighted"] += w * f1
    out["per_class"] = per_class
    out["accuracy"] = float(np.mean(pred == labels))
    return out


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n0 == 0 or n1 == 0:
        raise StatsError("AUROC undefined for single-class labels")
    ranks = rankdata(scores)  # midranks, exact multiples of 1/2
    u = ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


# -- effect sizes ----------------------------------------------------------


def classify_effect_size(d: float) -> str:
    a = abs(d)
    if a < 0.2:
        return "negligible"
    if a < 0.5:
        return "small"
    if a < 0.8:
        return "medium"
    return "large"


def cohens_d(group0, group1) -> EffectSizeResult:
    """Pooled-SD Cohen's d of ``mean(group0) - mean(group1)`` with a normal-approximation 95% CI."""
    a = np.asarray(group0, dtype=np.float64)
    b = np.asarray(group1, dtype=np.float64)
    n0, n1 = a.size, b.size
    if n0 < 2 or n1 < 2:
        raise StatsError("each group needs at least 2 values")
    pooled = math.sqrt(((n0 - 1) * a.var(ddof=1) + (n1 - 1) * b.var(ddof=1)) / (n0 + n1 - 2))
    if pooled == 0:
        raise StatsError("zero pooled SD")
    d = (a.mean() - b.mean()) / pooled
    se = math.sqrt((n0 + n1) / (n0 * n1) + d * d / (2 * (n0 + n1)))
    return EffectSizeResult(float(d), float(d - Z95 * se), float(d + Z95 * se), n0, n1, classify_effect_size(d))


# -- rank correlation ------------------------------------------------------


def _pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Correlation of ``a`` with each row of ``b``."""
    a = a - a.mean()
    b = b - b.mean(axis=-1, keepdims=True)
    denom = np.sqrt((a * a).sum()) * np.sqrt((b * b).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, (b * a).sum(axis=-1) / denom, 0.0)


def spearman_exact(x, y, chunk: int = 200_000) -> tuple[float, float]:
    """Spearman's rho with a two-sided p-value from all n! rank permutations.

    Ties get average ranks; the permutation distribution is then taken over
    the tied rank multiset, which keeps the test exact.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if y.size != n:
        raise StatsError("x and y must have the same length")
    if n < 2:
        raise StatsError("need at least 2 pairs")
    if n > SPEARMAN_MAX_N:
        raise StatsError(f"exact enumeration limited to n <= {SPEARMAN_MAX_N}; got n = {n}")
    rx, ry = rankdata(x), rankdata(y)
    rho = float(_pearson(rx, ry[None, :])[0])
    target = abs(rho) - 1e-12
    hits = 0
    total = 0
    perms = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        r = _pearson(rx, ry[block])
        hits += int(np.sum(np.abs(r) >= target))
        total += block.shape[0]
    return rho, hits / total


# -- aggregation -----------------------------------------------------------


def summarize(values) -> MetricSummary:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise StatsError("nothing to summarize")
    if v.size == 1:
        return MetricSummary(float(v[0]), 0.0, float(v[0]), 1, sd_defined=False)
    return MetricSummary(float(v.mean()), float(v.std(ddof=1)), float(np.median(v)), int(v.size))


def aggregate_folds(reports) -> FoldAggregate:
    reports = list(reports)
    if not reports:
        raise StatsError("no fold reports to aggregate")
    return FoldAggregate({m: summarize([r.metric(m) for r in reports]) for m in FoldReport.METRICS})


def trajectory_with_ci(segments_by_class: dict) -> dict:
    """Per-bin class means with ``mean +- 1.96 * sd / sqrt(n)`` ribbons (sample SD).

    ``segments_by_class`` maps a class label to an array (n_segments, n_bins,
    n_channels) or a list of (n_bins, n_channels) arrays.  Returns
    class -> dict(mean, ci_low, ci_high, n), each array (n_bins, n_channels).
    """
    out = {}
    for cls, segs in segments_by_class.items():
        arr = np.asarray(segs, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        n = arr.shape[0]
        if n < 2:
            raise StatsError(f"class {cls}: need at least 2 segments for a confidence interval")
        mean = arr.mean(axis=0)
        half = Z95 * arr.std(axis=0, ddof=1) / math.sqrt(n)
        out[cls] = {"mean": mean, "ci_low": mean - half, "ci_high": mean + half, "n": n}
    return out
