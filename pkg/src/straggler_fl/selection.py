"""Client selection: the tiered, clustering-based selector and the random baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .behavior import BehaviorStore, ClientRecord, ClientTier, tier_of
from .clustering import (
    DEFAULT_MIN_SAMPLES,
    ClusterAssignment,
    cluster_dump,
    sample_from_clusters,
    select_epsilon,
    sort_clusters,
)
from .errors import NoClientsError
from .features import DEFAULT_ALPHA, ClientFeatures, features_for

__all__ = ["RoundPlan", "select_clients", "select_random"]

_MIN_CLUSTERABLE = 3


@dataclass(frozen=True)
class RoundPlan:
    round: int
    selected: tuple
    tier_counts: dict = field(default_factory=dict)
    assignment: ClusterAssignment | None = None
    groups: tuple | None = None

    def to_log(self) -> dict:
        return {"round": self.round, "selected": list(self.selected), "tier_counts": dict(self.tier_counts)}

    def cluster_log(self) -> dict | None:
        if self.assignment is None:
            return None
        entry = cluster_dump(self.assignment, self.groups or ())
        entry["round"] = self.round
        return entry


def _records(store) -> list[ClientRecord]:
    if isinstance(store, BehaviorStore):
        recs = list(store)
    elif isinstance(store, Mapping):
        recs = list(store.values())
    else:
        recs = list(store)
    return sorted(recs, key=lambda r: r.client_id)


def _sample(rng: np.random.Generator, ids: Sequence, k: int) -> list:
    if k <= 0:
        return []
    idx = rng.choice(len(ids), size=min(k, len(ids)), replace=False)
    return [ids[i] for i in idx]


def select_random(store, round: int, clients_per_round: int, rng: np.random.Generator) -> RoundPlan:
    """Uniform selection without replacement, as FedAvg and FedProx use."""
    recs = _records(store)
    if not recs:
        raise NoClientsError("population is empty")
    ids = [r.client_id for r in recs]
    return RoundPlan(round, tuple(_sample(rng, ids, clients_per_round)), _tier_counts(recs))


def _tier_counts(recs: Iterable[ClientRecord]) -> dict:
    counts = {t.value + "s": 0 for t in ClientTier}
    for r in recs:
        counts[tier_of(r).value + "s"] += 1
    return counts


def select_clients(
    store,
    round: int,
    max_rounds: int,
    clients_per_round: int,
    rng: np.random.Generator,
    *,
    alpha: float = DEFAULT_ALPHA,
    max_training_time: float = 1.0,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> RoundPlan:
    """Pick rookies first, then participants by cluster, then stragglers.

    Rookies fill the round alone when there are enough of them. Otherwise
    all rookies are taken, participants cover as much of the remainder as
    they can through :func:`sample_from_clusters`, and any shortfall is
    drawn uniformly from the stragglers. Clustering uses training EMA scaled
    by ``max_training_time`` and missed-round EMA as the two axes.
    """
    if not 1 <= round <= max_rounds:
        raise ValueError(f"round {round} outside 1..{max_rounds}")
    if clients_per_round < 1:
        raise ValueError("clients_per_round must be >= 1")
    recs = _records(store)
    if not recs:
        raise NoClientsError("population is empty")

    tiers: dict = {t: [] for t in ClientTier}
    for r in recs:
        tiers[tier_of(r)].append(r)
    rookies = [r.client_id for r in tiers[ClientTier.ROOKIE]]
    participants = tiers[ClientTier.PARTICIPANT]
    stragglers = [r.client_id for r in tiers[ClientTier.STRAGGLER]]
    counts = _tier_counts(recs)

    if len(rookies) >= clients_per_round:
        return RoundPlan(round, tuple(_sample(rng, rookies, clients_per_round)), counts)

    needed = clients_per_round - len(rookies)
    cluster_count = min(needed, len(participants))
    straggler_count = needed - cluster_count
    straggler_clients = _sample(rng, stragglers, straggler_count)

    feats = [features_for(r, round, alpha, max_training_time) for r in participants]
    cluster_clients, assignment, groups = _pick_participants(
        feats, cluster_count, round, max_rounds, max_training_time, min_samples
    )
    selected = tuple(list(rookies) + cluster_clients + straggler_clients)
    return RoundPlan(round, selected, counts, assignment, groups)


def _pick_participants(
    feats: list[ClientFeatures],
    count: int,
    round: int,
    max_rounds: int,
    max_training_time: float,
    min_samples: int,
):
    if count == 0 or not feats:
        return [], None, None
    points = np.array([[f.training_ema / max_training_time, f.missed_round_ema] for f in feats])
    distinct = len(np.unique(points, axis=0))
    if len(feats) < _MIN_CLUSTERABLE or distinct < 2:
        ordered = sorted(feats, key=lambda f: (f.total_ema, f.invocation_count, f.client_id))
        return [f.client_id for f in ordered[:count]], None, None
    assignment = select_epsilon(
        points, min_samples=min_samples, client_ids=[f.client_id for f in feats]
    )
    groups = sort_clusters(assignment, feats)
    picked = sample_from_clusters(groups, count, round, max_rounds)
    return picked, assignment, tuple(tuple(g) for g in groups)
