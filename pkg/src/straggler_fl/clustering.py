"""Behavior clustering: DBSCAN, Calinski-Harabasz scoring and cluster walking.

The functional API (:func:`dbscan`, :func:`ch_index`, :func:`select_epsilon`)
is what the selector uses. :class:`DBSCAN` and :class:`GridSearchDBSCAN`
wrap the same code as scikit-learn estimators so they can sit in pipelines
and be cloned with ``get_params``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import EmptyInputError, InconsistentStateError, UndefinedIndexError
from .features import ClientFeatures

__all__ = [
    "OUTLIER",
    "ClusterAssignment",
    "DBSCAN",
    "GridSearchDBSCAN",
    "dbscan",
    "ch_index",
    "epsilon_grid",
    "select_epsilon",
    "sort_clusters",
    "sample_from_clusters",
    "cluster_dump",
]

#: Label shared by every DBSCAN noise point.
OUTLIER = -1

DEFAULT_MIN_SAMPLES = 2
_FALLBACK_EPSILON = 1.0


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.size == 0:
        raise EmptyInputError("cannot cluster an empty point set")
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def _pairwise(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def dbscan(points, epsilon: float, min_samples: int = DEFAULT_MIN_SAMPLES) -> np.ndarray:
    """Label points with DBSCAN using the Euclidean metric.

    A point is a core point when at least ``min_samples`` points (itself
    included) lie within ``epsilon``. Clusters are numbered from 0 in order
    of their lowest-index core point; border points join the first cluster
    that reaches them. Noise points all get :data:`OUTLIER`.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if min_samples < 1:
        raise ValueError(f"min_samples must be >= 1, got {min_samples}")
    X = _as_points(points)
    n = len(X)
    within = _pairwise(X) <= epsilon
    neighbors = [np.flatnonzero(row) for row in within]
    core = within.sum(axis=1) >= min_samples

    labels = np.full(n, OUTLIER, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != OUTLIER or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if labels[k] == OUTLIER:
                    labels[k] = cluster
                    if core[k]:
                        queue.append(k)
        cluster += 1
    return labels


def ch_index(points, labels) -> float:
    """Calinski-Harabasz index of a labeling.

    ``[tr(B) / (k - 1)] / [tr(W) / (n - k)]`` with B the between-group and W
    the within-group dispersion. Noise is just another label here. Returns
    ``inf`` when groups are internally tight (``tr(W) == 0``) but distinct.
    """
    X = _as_points(points)
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise ValueError("points and labels differ in length")
    n = len(X)
    uniq = np.unique(labels)
    k = len(uniq)
    if k < 2 or n <= k:
        raise UndefinedIndexError(f"index undefined for n={n}, k={k}")
    centroid = X.mean(axis=0)
    between = 0.0
    within = 0.0
    for lab in uniq:
        members = X[labels == lab]
        c = members.mean(axis=0)
        between += len(members) * float(np.sum((c - centroid) ** 2))
        within += float(np.sum((members - c) ** 2))
    if within == 0.0:
        if between == 0.0:
            raise UndefinedIndexError("all points coincide")
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def epsilon_grid(points) -> list[float]:
    """Deciles 10%..90% of the nonzero pairwise distances.

    Empty when all points coincide.
    """
    X = _as_points(points)
    d = _pairwise(X)[np.triu_indices(len(X), k=1)]
    d = d[d > 0]
    if d.size == 0:
        return []
    grid = np.quantile(d, np.linspace(0.1, 0.9, 9))
    return sorted({float(e) for e in grid})


def _normalize(labels: np.ndarray) -> np.ndarray:
    """Map noise to one label past the last cluster so labels are 0..G-1."""
    out = labels.copy()
    n_clusters = int(labels.max()) + 1 if (labels >= 0).any() else 0
    out[labels == OUTLIER] = n_clusters
    return out


@dataclass(frozen=True)
class ClusterAssignment:
    labels: dict
    epsilon: float
    ch_score: float

    @property
    def n_groups(self) -> int:
        return len(set(self.labels.values()))

    def groups(self) -> dict:
        out: dict = {}
        for cid, lab in self.labels.items():
            out.setdefault(lab, []).append(cid)
        return out


def select_epsilon(
    points,
    candidates: Sequence[float] | None = None,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    client_ids: Sequence[Hashable] | None = None,
) -> ClusterAssignment:
    """Grid-search epsilon for the labeling with the highest CH index.

    Ties go to the smaller epsilon. When no candidate yields a defined index
    every point is put in a single group under the largest candidate.
    ``candidates`` defaults to :func:`epsilon_grid`.
    """
    X = _as_points(points)
    if client_ids is None:
        client_ids = list(range(len(X)))
    if len(client_ids) != len(X):
        raise ValueError("client_ids and points differ in length")
    if candidates is None:
        candidates = epsilon_grid(X) or [_FALLBACK_EPSILON]
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValueError("at least one epsilon candidate is required")

    best_labels = None
    best_eps = candidates[-1]
    best_score = -math.inf
    for eps in candidates:
        labels = _normalize(dbscan(X, eps, min_samples))
        try:
            score = ch_index(X, labels)
        except UndefinedIndexError:
            continue
        if best_labels is None or score > best_score:
            best_labels, best_eps, best_score = labels, eps, score
    if best_labels is None:
        best_labels = np.zeros(len(X), dtype=int)
    return ClusterAssignment(
        labels={cid: int(lab) for cid, lab in zip(client_ids, best_labels)},
        epsilon=best_eps,
        ch_score=best_score,
    )


def sort_clusters(
    assignment: ClusterAssignment, features: Sequence[ClientFeatures]
) -> list[list]:
    """Order groups fastest first by mean totalEma.

    Inside a group clients are ordered by invocation count, then id. Groups
    with equal means are ordered by their smallest client id.
    """
    by_id = {f.client_id: f for f in features}
    missing = [cid for cid in assignment.labels if cid not in by_id]
    if missing:
        raise InconsistentStateError(f"no features for clients {missing}")
    keyed = []
    for members in assignment.groups().values():
        members = sorted(members, key=lambda c: (by_id[c].invocation_count, c))
        mean = sum(by_id[c].total_ema for c in members) / len(members)
        keyed.append((mean, min(members), members))
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [members for _, _, members in keyed]


def sample_from_clusters(
    sorted_groups: Sequence[Sequence], count: int, round: int, max_rounds: int
) -> list:
    """Walk the sorted groups starting at the one matching training progress.

    The start group is ``floor((round - 1) / max_rounds * n_groups)``; the
    walk moves toward slower groups and wraps to the fastest. May return
    fewer than ``count`` clients when the groups run out.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 1 <= round <= max_rounds:
        raise ValueError(f"round {round} outside 1..{max_rounds}")
    n_groups = len(sorted_groups)
    if n_groups == 0 or count == 0:
        return []
    start = min(max(math.floor((round - 1) / max_rounds * n_groups), 0), n_groups - 1)
    picked: list = []
    for step in range(n_groups):
        for cid in sorted_groups[(start + step) % n_groups]:
            if len(picked) == count:
                return picked
            picked.append(cid)
    return picked


def cluster_dump(assignment: ClusterAssignment, groups: Sequence[Sequence]) -> dict:
    score = assignment.ch_score
    return {
        "epsilon": assignment.epsilon,
        "ch_score": score if math.isfinite(score) else None,
        "clusters": [list(g) for g in groups],
    }


class DBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN clustering estimator; noise is labeled :data:`OUTLIER`.

    Parameters
    ----------
    eps : float
        Neighborhood radius (inclusive).
    min_samples : int
        Neighbors, self included, needed for a core point.
    """

    def __init__(self, eps: float = 0.5, min_samples: int = DEFAULT_MIN_SAMPLES):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X)
        self.labels_ = dbscan(X, self.eps, self.min_samples)
        counts = (_pairwise(X) <= self.eps).sum(axis=1)
        self.core_sample_indices_ = np.flatnonzero(counts >= self.min_samples)
        return self


class GridSearchDBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN with epsilon picked by the Calinski-Harabasz index.

    Noise points form one extra group, so ``labels_`` are ``0..G-1``.

    Parameters
    ----------
    candidates : sequence of float or None
        Epsilon grid; ``None`` uses the pairwise-distance deciles of ``X``.
    min_samples : int
        Passed to :func:`dbscan`.
    """

    def __init__(self, candidates=None, min_samples: int = DEFAULT_MIN_SAMPLES):
        self.candidates = candidates
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_array(X)
        result = select_epsilon(X, self.candidates, self.min_samples)
        self.labels_ = np.array([result.labels[i] for i in range(len(X))])
        self.eps_ = result.epsilon
        self.ch_score_ = result.ch_score
        return self

    @property
    def n_clusters_(self) -> int:
        check_is_fitted(self, "labels_")
        return len(np.unique(self.labels_))
