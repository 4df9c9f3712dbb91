"""Open-set episode sampling with inlier-outlier imbalance control.

An episode drawn from a labelled pool consists of a small labelled support
set over n_in inlier classes and a shuffled query set mixing unlabelled
inliers with samples from disjoint outlier classes. Ground truth is kept on
a separate type so inference code structurally cannot read it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import FeatureSet
from .errors import SamplingError
from .rng import SplitMix64


@dataclass(frozen=True)
class EpisodeSpec:
    n_in: int = 5
    n_out_classes: int = 5
    k_shot: int = 5
    k_in_query: int = 15
    k_out_query: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.n_in < 2:
            raise SamplingError("n_in must be >= 2")
        if self.n_out_classes < 1:
            raise SamplingError("n_out_classes must be >= 1")
        if self.k_shot < 1:
            raise SamplingError("k_shot must be >= 1")
        if self.k_in_query < 0 or self.k_out_query < 0:
            raise SamplingError("query counts must be >= 0")
        if self.k_in_query + self.k_out_query < 1:
            raise SamplingError("episode needs at least one query sample")

    @property
    def query_size(self) -> int:
        return self.k_in_query * self.n_in + self.k_out_query * self.n_out_classes


@dataclass(frozen=True)
class TaskInputs:
    """What inference is allowed to see: support with labels, query without."""

    support_features: np.ndarray  # (|S|, D)
    support_labels: np.ndarray    # (|S|,) int64 in 0..n_in-1
    query_features: np.ndarray    # (|Q|, D)
    n_in: int

    def __post_init__(self):
        for arr in (self.support_features, self.support_labels, self.query_features):
            arr.setflags(write=False)


@dataclass(frozen=True)
class EpisodeTruth:
    """Hidden labels: -1 marks an inlier query, +1 an outlier query."""

    inlier_flags: np.ndarray   # (|Q|,) int64, -1 or +1
    class_indices: np.ndarray  # (|Q|,) int64, episode class for inliers, -1 otherwise

    def __post_init__(self):
        self.inlier_flags.setflags(write=False)
        self.class_indices.setflags(write=False)


@dataclass(frozen=True)
class Episode:
    inputs: TaskInputs
    truth: EpisodeTruth
    inlier_class_names: tuple[str, ...]
    outlier_class_names: tuple[str, ...]
    seed: int


class ImbalancePreset(NamedTuple):
    name: str
    k_in_query: int
    k_out_query: int


def imbalance_presets() -> list[ImbalancePreset]:
    """The evaluated query mixes; all keep |Q| = 150 with 5+5 classes."""
    return [
        ImbalancePreset("balanced", 15, 15),
        ImbalancePreset("ood20", 24, 6),
        ImbalancePreset("ood50", 15, 15),
        ImbalancePreset("ood80", 6, 24),
    ]


def preset_spec(name: str, seed: int = 0, k_shot: int = 5) -> EpisodeSpec:
    for p in imbalance_presets():
        if p.name == name:
            return EpisodeSpec(
                n_in=5,
                n_out_classes=5,
                k_shot=k_shot,
                k_in_query=p.k_in_query,
                k_out_query=p.k_out_query,
                seed=seed,
            )
    raise SamplingError(f"unknown preset {name!r}")


def sample_episode(pool: FeatureSet, spec: EpisodeSpec) -> Episode:
    """Draw one episode; deterministic in (pool, spec).

    Classes are drawn without replacement, then per-class samples without
    replacement; support and query are disjoint by construction and the
    mixed query is shuffled so ordering carries no information.
    """
    class_names = pool.class_names
    needed = spec.n_in + spec.n_out_classes
    if len(class_names) < needed:
        raise SamplingError(
            f"pool has {len(class_names)} classes, episode needs {needed}"
        )
    rows_by_class = pool.rows_by_class()
    rng = SplitMix64(spec.seed)

    chosen = rng.sample_indices(len(class_names), needed)
    inlier_names = [class_names[c] for c in chosen[: spec.n_in]]
    outlier_names = [class_names[c] for c in chosen[spec.n_in :]]

    support_rows: list[int] = []
    support_labels: list[int] = []
    query_entries: list[tuple[int, int, int]] = []  # (pool_row, flag, class_index)

    per_inlier = spec.k_shot + spec.k_in_query
    for j, name in enumerate(inlier_names):
        rows = rows_by_class[name]
        if len(rows) < per_inlier:
            raise SamplingError(
                f"inlier class {name!r} has {len(rows)} samples, "
                f"needs {per_inlier} (k_shot + k_in_query)"
            )
        picked = rng.sample_indices(len(rows), per_inlier)
        for p in picked[: spec.k_shot]:
            support_rows.append(rows[p])
            support_labels.append(j)
        for p in picked[spec.k_shot :]:
            query_entries.append((rows[p], -1, j))

    for name in outlier_names:
        rows = rows_by_class[name]
        if len(rows) < spec.k_out_query:
            raise SamplingError(
                f"outlier class {name!r} has {len(rows)} samples, "
                f"needs {spec.k_out_query} (k_out_query)"
            )
        picked = rng.sample_indices(len(rows), spec.k_out_query)
        for p in picked:
            query_entries.append((rows[p], +1, -1))

    rng.shuffle(query_entries)

    q_rows = [e[0] for e in query_entries]
    inputs = TaskInputs(
        support_features=pool.features[support_rows].copy(),
        support_labels=np.asarray(support_labels, dtype=np.int64),
        query_features=pool.features[q_rows].copy(),
        n_in=spec.n_in,
    )
    truth = EpisodeTruth(
        inlier_flags=np.asarray([e[1] for e in query_entries], dtype=np.int64),
        class_indices=np.asarray([e[2] for e in query_entries], dtype=np.int64),
    )
    return Episode(
        inputs=inputs,
        truth=truth,
        inlier_class_names=tuple(inlier_names),
        outlier_class_names=tuple(outlier_names),
        seed=spec.seed,
    )
