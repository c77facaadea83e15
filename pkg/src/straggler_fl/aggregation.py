"""Model exchange types, the staleness buffer and the two aggregation rules."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DuplicateUpdateError, EmptyAggregationError

__all__ = [
    "DEFAULT_TAU",
    "ModelParams",
    "PendingUpdate",
    "StalenessBuffer",
    "submit_update",
    "staleness_coefficients",
    "aggregate_round",
    "fedavg_aggregate",
]

DEFAULT_TAU = 2


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray
    version_round: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be a flat vector")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class PendingUpdate:
    client_id: Hashable
    params: ModelParams
    origin_round: int
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 1:
            raise ValueError(f"cardinality must be >= 1, got {self.cardinality}")
        if self.origin_round < 1:
            raise ValueError(f"origin_round must be >= 1, got {self.origin_round}")

    @property
    def key(self) -> tuple:
        return (self.client_id, self.origin_round)


@dataclass
class StalenessBuffer:
    """Updates waiting for the next aggregation.

    Submissions are serialized by a lock so simulated clients may push from
    worker threads.
    """

    pending: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.pending)

    def submit(self, update: PendingUpdate) -> "StalenessBuffer":
        with self._lock:
            if any(u.key == update.key for u in self.pending):
                raise DuplicateUpdateError(
                    f"client {update.client_id!r} already pushed an update for round {update.origin_round}"
                )
            self.pending.append(update)
        return self

    def drain(self) -> list:
        with self._lock:
            out, self.pending = self.pending, []
        return out


def submit_update(buffer: StalenessBuffer, update: PendingUpdate) -> StalenessBuffer:
    return buffer.submit(update)


def staleness_coefficients(
    updates: Iterable[PendingUpdate], current_round: int, tau: int = DEFAULT_TAU
) -> list[tuple[PendingUpdate, float]]:
    """Survivors of the staleness cap and their weights ``(t_k/t)(n_k/n)``.

    Updates with ``t - t_k >= tau`` are dropped before ``n`` is summed.
    Survivors come back sorted by (origin round, client id) so the weighted
    sum does not depend on arrival order.
    """
    if current_round < 1:
        raise ValueError(f"rounds are 1-based, got {current_round}")
    survivors = []
    for u in updates:
        if u.origin_round > current_round:
            raise ValueError(f"update from round {u.origin_round} is newer than round {current_round}")
        if current_round - u.origin_round < tau:
            survivors.append(u)
    survivors.sort(key=lambda u: (u.origin_round, str(u.client_id)))
    n = sum(u.cardinality for u in survivors)
    t = current_round
    return [(u, (u.origin_round / t) * (u.cardinality / n)) for u in survivors]


def _weighted_sum(pairs: Sequence[tuple[PendingUpdate, float]]) -> np.ndarray:
    sizes = {u.params.weights.shape for u, _ in pairs}
    if len(sizes) != 1:
        raise ValueError(f"updates disagree on weight layout: {sorted(sizes)}")
    out = np.zeros_like(pairs[0][0].params.weights)
    for u, c in pairs:
        out += c * u.params.weights
    return out


def aggregate_round(
    buffer: StalenessBuffer,
    current_round: int,
    tau: int = DEFAULT_TAU,
    *,
    renormalize: bool = False,
) -> tuple[ModelParams, StalenessBuffer]:
    """Staleness-aware aggregation of everything in ``buffer``.

    ``w_{t+1} = sum_k (t_k / t) * (n_k / n) * w_k`` over updates younger than
    ``tau`` rounds. Coefficients are used as-is, so stale survivors shrink
    the total weight below one; ``renormalize=True`` rescales them to sum to
    one instead. The buffer is emptied, including discarded updates.
    """
    pairs = staleness_coefficients(buffer.drain(), current_round, tau)
    if not pairs:
        raise EmptyAggregationError(f"no update younger than tau={tau} at round {current_round}")
    if renormalize:
        total = sum(c for _, c in pairs)
        pairs = [(u, c / total) for u, c in pairs]
    return ModelParams(_weighted_sum(pairs), current_round + 1), buffer


def fedavg_aggregate(updates: Sequence[PendingUpdate]) -> ModelParams:
    """Sample-weighted mean ``sum_k (n_k / n) * w_k``; origin rounds are ignored."""
    updates = sorted(updates, key=lambda u: (u.origin_round, str(u.client_id)))
    if not updates:
        raise EmptyAggregationError("no updates to aggregate")
    n = sum(u.cardinality for u in updates)
    pairs = [(u, u.cardinality / n) for u in updates]
    return ModelParams(_weighted_sum(pairs), max(u.origin_round for u in updates) + 1)
