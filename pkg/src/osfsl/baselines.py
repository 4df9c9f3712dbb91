"""Inductive reference methods for the benchmark tables.

simpleshot_maxprob: nearest-prototype classification over centered cosine
logits, with 1 - max class probability as the outlier score. Scoring one
query never looks at the others (beyond the shared task centering, which
is permutation invariant).

knn_outlier_scores: mean Euclidean distance from a centered query to its k
nearest centered support features; higher means more outlier-like.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import Episode, TaskInputs
from .errors import ParameterError
from .model import DEFAULT_ETA0, row_softmax, center_episode, cosine_matrix

DEFAULT_KNN_K = 3


@dataclass(frozen=True)
class BaselineOutput:
    predictions: np.ndarray    # (|Q|,) class indices
    outlier_scores: np.ndarray  # (|Q|,) higher = more outlier-like


def _inputs(task: TaskInputs | Episode) -> TaskInputs:
    return task.inputs if isinstance(task, Episode) else task


def simpleshot_maxprob(task: TaskInputs | Episode, eta0: float = DEFAULT_ETA0) -> BaselineOutput:
    """Prototype classifier with MaxProb outlier scoring.

    eta0 matches the transductive heads' initial logit scale so the
    baseline sees the same temperature.
    """
    inputs = _inputs(task)
    te = center_episode(inputs)
    n_in = inputs.n_in
    prototypes = np.stack([
        te.centered_support[te.support_labels == j].mean(axis=0) for j in range(n_in)
    ])
    probs = row_softmax(eta0 * cosine_matrix(te.centered_query, prototypes))
    return BaselineOutput(
        predictions=np.argmax(probs, axis=1),
        outlier_scores=1.0 - probs.max(axis=1),
    )


def _support_distances(task: TaskInputs | Episode) -> np.ndarray:
    inputs = _inputs(task)
    te = center_episode(inputs)
    diff = te.centered_query[:, None, :] - te.centered_support[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def knn_outlier_scores(task: TaskInputs | Episode, k: int = DEFAULT_KNN_K) -> np.ndarray:
    """Mean distance to the k nearest centered support features."""
    inputs = _inputs(task)
    n_support = inputs.support_features.shape[0]
    if not 1 <= k <= n_support:
        raise ParameterError(f"k={k} out of range for support size {n_support}")
    dists = _support_distances(inputs)
    nearest = np.sort(dists, axis=1)[:, :k]
    return nearest.mean(axis=1)


def knn_predictions(task: TaskInputs | Episode, k: int = DEFAULT_KNN_K) -> np.ndarray:
    """Majority label among the k nearest support features.

    Ties break toward the class whose nearest member is closest, so the
    result is deterministic.
    """
    inputs = _inputs(task)
    n_support = inputs.support_features.shape[0]
    if not 1 <= k <= n_support:
        raise ParameterError(f"k={k} out of range for support size {n_support}")
    dists = _support_distances(inputs)
    order = np.argsort(dists, axis=1, kind="stable")[:, :k]
    labels = inputs.support_labels[order]  # (|Q|, k), nearest first
    preds = np.empty(len(labels), dtype=np.int64)
    for i, row in enumerate(labels):
        counts = np.bincount(row, minlength=inputs.n_in)
        best = np.flatnonzero(counts == counts.max())
        if len(best) == 1:
            preds[i] = best[0]
        else:
            ranks = {c: np.argmax(row == c) for c in best}
            preds[i] = min(best, key=lambda c: ranks[c])
    return preds
