"""Exact open-set metrics and cross-episode aggregation.

Outliers (flag +1) are the positive class throughout: the detector's score
is "how outlier-like", so ranking metrics read it that way. Tie groups are
atomic in every threshold sweep - a threshold cannot split equal scores -
and the PR area uses the non-interpolated step sum, which is deterministic
and oracle-checkable. Metrics that are undefined for an episode (no
inliers for accuracy, a single class for AUROC, no positives for AUPR)
return None and are excluded per metric during aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

METRIC_NAMES = ("acc", "auroc", "aupr", "prec_at_90")


@dataclass(frozen=True)
class EpisodeOutcome:
    """Per-query predictions and scores next to the revealed ground truth."""

    outlier_scores: np.ndarray  # (|Q|,)
    predictions: np.ndarray     # (|Q|,) class indices
    truth_flags: np.ndarray     # (|Q|,) -1 inlier / +1 outlier
    truth_classes: np.ndarray   # (|Q|,) class index for inliers, -1 otherwise

    def __post_init__(self):
        n = len(self.outlier_scores)
        if not (len(self.predictions) == len(self.truth_flags)
                == len(self.truth_classes) == n):
            raise ParameterError("outcome arrays must have equal length")
        if not np.all(np.isin(self.truth_flags, (-1, 1))):
            raise ParameterError("truth flags must be -1 or +1")
        if not np.all(np.isfinite(self.outlier_scores)):
            raise ParameterError("outlier scores must be finite")


@dataclass(frozen=True)
class MetricsSummary:
    metric: str
    mean: float
    ci95: float   # 1.96 * s / sqrt(n), 0 when n == 1
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("aggregation needs at least one defined value")
        if self.ci95 < 0:
            raise ParameterError("confidence half-width cannot be negative")


def accuracy(outcome: EpisodeOutcome) -> float | None:
    """Fraction of true inliers predicted as their true class.

    Outlier queries are excluded from the denominator; with zero inliers
    the metric is undefined.
    """
    inlier = outcome.truth_flags == -1
    if not np.any(inlier):
        return None
    hits = outcome.predictions[inlier] == outcome.truth_classes[inlier]
    return float(np.mean(hits))


def _split_scores(scores, flags):
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags)
    pos = scores[flags == 1]
    neg = scores[flags == -1]
    return pos, neg


def auroc(scores, flags) -> float | None:
    """Exact Mann-Whitney statistic: P(outlier score > inlier score) + ties/2.

    Computed from midranks, which is algebraically identical to the
    pairwise definition but O(n log n).
    """
    pos, neg = _split_scores(scores, flags)
    if len(pos) == 0 or len(neg) == 0:
        return None
    allscores = np.concatenate([pos, neg])
    order = np.argsort(allscores, kind="stable")
    sorted_scores = allscores[order]
    ranks = np.empty(len(allscores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    u = float(np.sum(ranks[: len(pos)])) - len(pos) * (len(pos) + 1) / 2.0
    return u / (len(pos) * len(neg))


def _tie_groups(scores, flags):
    """Descending tie groups as (positives_in_group, group_size) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    is_pos = np.asarray(flags) == 1
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = is_pos[order]
    groups = []
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        groups.append((int(np.sum(p[i : j + 1])), j - i + 1))
        i = j + 1
    return groups


def aupr(scores, flags) -> float | None:
    """Step-sum area under precision-recall, outliers positive.

    sum_k (R_k - R_{k-1}) * P_k over descending tie groups; no
    interpolation between points.
    """
    pos, _ = _split_scores(scores, flags)
    n_pos = len(pos)
    if n_pos == 0:
        return None
    area = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    for group_pos, group_size in _tie_groups(scores, flags):
        tp += group_pos
        seen += group_size
        recall = tp / n_pos
        precision = tp / seen
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def precision_at_recall(scores, flags, r: float = 0.9) -> float | None:
    """Precision of the smallest descending-score prefix reaching recall >= r.

    Tie groups are taken whole. With at least one positive, recall hits 1.0
    at the full set, so any r <= 1 is reachable.
    """
    if not 0.0 < r <= 1.0:
        raise ParameterError(f"recall target must be in (0, 1], got {r}")
    pos, _ = _split_scores(scores, flags)
    n_pos = len(pos)
    if n_pos == 0:
        return None
    tp = 0
    seen = 0
    for group_pos, group_size in _tie_groups(scores, flags):
        tp += group_pos
        seen += group_size
        if tp / n_pos >= r:
            return tp / seen
    return tp / seen  # unreachable: the last group always reaches recall 1


def episode_metrics(outcome: EpisodeOutcome) -> dict[str, float | None]:
    return {
        "acc": accuracy(outcome),
        "auroc": auroc(outcome.outlier_scores, outcome.truth_flags),
        "aupr": aupr(outcome.outlier_scores, outcome.truth_flags),
        "prec_at_90": precision_at_recall(outcome.outlier_scores, outcome.truth_flags, 0.9),
    }


def aggregate(metric: str, values: list[float | None]) -> MetricsSummary | None:
    """Mean and 95% normal-approximation half-width over defined episodes."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    arr = np.asarray(defined, dtype=np.float64)
    mean = float(arr.mean())
    ci = 0.0 if len(arr) == 1 else float(1.96 * arr.std(ddof=1) / np.sqrt(len(arr)))
    return MetricsSummary(metric=metric, mean=mean, ci95=ci, n=len(arr))
