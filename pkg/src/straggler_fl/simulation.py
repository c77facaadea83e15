"""Discrete-event round engine.

Client durations are simulated time drawn from a serverless latency model;
the numeric local training runs as fast as the host allows. Rounds run back
to back: round ``r`` starts when round ``r - 1`` closes and lasts
``round_wall_time``. A late update becomes visible at the first barrier whose
close time is at or after its arrival.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .aggregation import (
    ModelParams,
    PendingUpdate,
    StalenessBuffer,
    aggregate_round,
    fedavg_aggregate,
)
from .behavior import BehaviorStore, record_failure, record_invocation, record_success
from .config import ScenarioConfig
from .data import DatasetPartition, load_mnist, make_blobs, partition_iid, partition_noniid
from .errors import EmptyAggregationError
from .metrics import CostModel, MetricsRow, bias, eur, round_cost
from .outcomes import Crashed, Late, OnTime, RoundOutcome
from .selection import RoundPlan, select_clients, select_random
from .training import MLP, SoftmaxRegression, TrainConfig, evaluate_weighted, local_train

__all__ = [
    "LatencyModel",
    "StragglerInjection",
    "ExperimentReport",
    "Simulation",
    "sample_client_duration",
    "client_rng",
    "run_experiment",
]

logger = logging.getLogger(__name__)

# Separate stream tags so draws for one purpose never shift another's.
_PURPOSE = {"latency": 1, "train": 2, "slow": 3, "eval": 4}


def _stable_int(value: Hashable) -> int:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    return zlib.crc32(repr(value).encode())


def client_rng(seed: int, client_id: Hashable, round: int, purpose: str) -> np.random.Generator:
    """Independent stream for one (run seed, client, round, purpose)."""
    return np.random.default_rng([seed, _stable_int(client_id), round, _PURPOSE[purpose]])


@dataclass(frozen=True)
class LatencyModel:
    """Per-client lognormal training time plus cold starts and jitter.

    ``medians`` holds the median seconds of every client. A cold start is
    charged when a client was never invoked or sat out at least
    ``cold_start_idle_threshold`` rounds since its last invocation.
    """

    medians: Mapping
    sigma: float = 0.1
    cold_start_penalty: float = 4.0
    cold_start_idle_threshold: int = 2
    jitter_mean: float = 0.5


def sample_client_duration(
    model: LatencyModel, client_id: Hashable, rounds_idle: int | None, rng: np.random.Generator
) -> float:
    """Draw one invocation's duration; ``rounds_idle=None`` means never invoked."""
    median = float(model.medians[client_id])
    base = median * math.exp(model.sigma * rng.standard_normal()) if model.sigma > 0 else median
    if rounds_idle is None or rounds_idle >= model.cold_start_idle_threshold:
        base += model.cold_start_penalty
    if model.jitter_mean > 0:
        base += rng.exponential(model.jitter_mean)
    return base


@dataclass(frozen=True)
class StragglerInjection:
    """Clients forced to misbehave for a whole experiment.

    ``slow`` clients always push their update after the round closes,
    ``crash`` clients never push anything.
    """

    slow: frozenset = frozenset()
    crash: frozenset = frozenset()

    @classmethod
    def choose(cls, client_ids, ratio: float, slow_fraction: float, rng, fixed_set=()) -> "StragglerInjection":
        ids = list(client_ids)
        if fixed_set:
            chosen = [ids[i] for i in fixed_set]
        else:
            k = int(round(ratio * len(ids)))
            chosen = [ids[i] for i in sorted(rng.choice(len(ids), size=k, replace=False))] if k else []
        n_slow = int(round(slow_fraction * len(chosen)))
        order = rng.permutation(len(chosen)) if chosen else []
        slow = frozenset(chosen[i] for i in order[:n_slow])
        return cls(slow=slow, crash=frozenset(chosen) - slow)

    @property
    def all(self) -> frozenset:
        return self.slow | self.crash


@dataclass
class ExperimentReport:
    config: ScenarioConfig
    rows: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    invocations: dict = field(default_factory=dict)
    stragglers: StragglerInjection = field(default_factory=StragglerInjection)
    error: str | None = None

    @property
    def mean_eur(self) -> float:
        return float(np.mean([r.eur for r in self.rows])) if self.rows else math.nan

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy if self.rows else math.nan

    @property
    def total_time(self) -> float:
        return math.fsum(r.round_wall_time for r in self.rows)

    @property
    def total_cost(self) -> float:
        return math.fsum(r.round_cost for r in self.rows)

    @property
    def bias(self) -> int:
        return bias(list(self.invocations.values()))

    def mean_invocations(self, client_ids) -> float:
        ids = list(client_ids)
        return float(np.mean([self.invocations[c] for c in ids])) if ids else math.nan

    def summary(self) -> dict:
        reliable = [c for c in self.invocations if c not in self.stragglers.all]
        hist = Counter(self.invocations.values())
        return {
            "strategy": self.config.strategy,
            "straggler_ratio": self.config.stragglers.ratio,
            "seed": self.config.seed,
            "rounds": len(self.rows),
            "final_accuracy": self.final_accuracy,
            "mean_eur": self.mean_eur,
            "bias": self.bias,
            "total_time": self.total_time,
            "total_cost": self.total_cost,
            "invocation_histogram": {str(k): hist[k] for k in sorted(hist)},
            "invocations": dict(self.invocations),
            "mean_invocations_reliable": self.mean_invocations(reliable),
            "mean_invocations_stragglers": self.mean_invocations(sorted(self.stragglers.all)),
            "injected_slow": sorted(self.stragglers.slow),
            "injected_crash": sorted(self.stragglers.crash),
            "error": self.error,
        }

    def csv_text(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(MetricsRow.CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_values())
        return buf.getvalue()


@dataclass
class _InFlight:
    client_id: Hashable
    origin_round: int
    arrival_time: float
    duration: float
    params: ModelParams
    cardinality: int


class Simulation:
    """Mutable experiment state driven one round at a time.

    Everything random derives from ``config.seed``: the population, data and
    injected stragglers do not depend on the strategy, so strategies run
    with the same seed face the same clients.
    """

    def __init__(self, config: ScenarioConfig, partitions: list[DatasetPartition] | None = None):
        self.config = config
        seed = config.seed
        self.client_ids = [f"client-{i:03d}" for i in range(config.n_clients)]
        self.partitions = partitions if partitions is not None else self._make_partitions()
        self._by_id = {p.client_id: p for p in self.partitions}

        pop_rng = np.random.default_rng([seed, 101])
        lat = config.latency
        medians = pop_rng.uniform(lat.median_min, lat.median_max, size=config.n_clients)
        self.latency = LatencyModel(
            medians=dict(zip(self.client_ids, medians.tolist())),
            sigma=lat.sigma,
            cold_start_penalty=lat.cold_start_penalty,
            cold_start_idle_threshold=lat.cold_start_idle_threshold,
            jitter_mean=lat.jitter_mean,
        )
        s = config.stragglers
        self.injected = StragglerInjection.choose(
            self.client_ids, s.ratio, s.slow_fraction, np.random.default_rng([seed, 102]), s.fixed_set
        )

        n_features = self.partitions[0].X_train.shape[1]
        n_classes = self._n_classes
        tp = config.train
        self.model = MLP(n_features, n_classes, tp.hidden) if tp.model == "mlp" else SoftmaxRegression(n_features, n_classes)
        self.train_config = TrainConfig(
            tp.local_epochs,
            tp.batch_size,
            tp.learning_rate,
            config.fedprox.mu if config.strategy == "fedprox" else 0.0,
        )
        self.global_params = ModelParams(self.model.init(np.random.default_rng([seed, 103])), 1)

        self.store = BehaviorStore.for_clients(self.client_ids)
        self.buffer = StalenessBuffer()
        self.cost_model = CostModel(**vars(config.cost))
        self.select_rng = np.random.default_rng([seed, 104])
        self.clock = 0.0
        self.round = 0
        self.last_invoked: dict = {}
        self.in_flight: list[_InFlight] = []
        self.report = ExperimentReport(
            config, stragglers=self.injected, invocations={cid: 0 for cid in self.client_ids}
        )
        self._outcomes_by_round: dict = {}

    @property
    def _n_classes(self) -> int:
        if self.config.data.kind == "synthetic":
            return self.config.data.n_classes
        return int(max(max(p.y_train.max(), p.y_test.max(initial=0)) for p in self.partitions)) + 1

    def _make_partitions(self) -> list[DatasetPartition]:
        c = self.config
        d = c.data
        rng = np.random.default_rng([c.seed, 100])
        if d.kind == "mnist":
            X, y = load_mnist(d.mnist_images, d.mnist_labels)
        else:
            X, y = make_blobs(
                c.n_clients * d.samples_per_client, d.n_classes, d.n_features, rng,
                separation=d.separation, noise=d.noise,
            )
        if d.partition == "iid":
            return partition_iid(X, y, c.n_clients, rng, test_fraction=d.test_fraction, client_ids=self.client_ids)
        return partition_noniid(
            X, y, c.n_clients, d.shards_per_client, rng,
            test_fraction=d.test_fraction, client_ids=self.client_ids,
        )

    def _plan(self, r: int) -> RoundPlan:
        c = self.config
        if c.strategy == "fedlesscan":
            return select_clients(
                self.store, r, c.max_rounds, c.clients_per_round, self.select_rng,
                alpha=c.fedlesscan.alpha, max_training_time=c.timeout,
                min_samples=c.fedlesscan.min_samples,
            )
        return select_random(self.store, r, c.clients_per_round, self.select_rng)

    def _epochs_for(self, cid) -> int | None:
        c = self.config
        if c.strategy == "fedprox" and cid in self.injected.all:
            return max(1, int(round(c.train.local_epochs * c.fedprox.straggler_epoch_multiplier)))
        return None

    def _train(self, cid, r: int) -> tuple[ModelParams, int]:
        return local_train(
            self.global_params, self._by_id[cid], self.train_config,
            client_rng(self.config.seed, cid, r, "train"), model=self.model, epochs=self._epochs_for(cid),
        )

    def run_round(self, r: int | None = None) -> RoundOutcome:
        c = self.config
        r = self.round + 1 if r is None else r
        if r != self.round + 1:
            raise ValueError(f"expected round {self.round + 1}, got {r}")
        plan = self._plan(r)
        start = self.clock

        results: dict = {}
        for cid in plan.selected:
            self.store.put(record_invocation(self.store[cid]))
            last = self.last_invoked.get(cid)
            idle = None if last is None else r - last - 1
            rng = client_rng(c.seed, cid, r, "latency")
            duration = sample_client_duration(self.latency, cid, idle, rng)
            self.last_invoked[cid] = r
            if cid in self.injected.crash:
                results[cid] = Crashed()
                continue
            if cid in self.injected.slow:
                lo, hi = c.stragglers.slow_delay_min, c.stragglers.slow_delay_max
                duration = c.timeout * client_rng(c.seed, cid, r, "slow").uniform(lo, hi)
            results[cid] = OnTime(duration) if duration <= c.timeout else Late(duration)

        on_time = [cid for cid, res in results.items() if isinstance(res, OnTime)]
        if len(on_time) < len(results):
            wall = c.timeout
        else:
            wall = max((results[cid].duration for cid in on_time), default=0.0)
        close = start + wall
        outcome = RoundOutcome(r, results, wall)

        for cid in on_time:
            params, n_k = self._train(cid, r)
            self.buffer.submit(PendingUpdate(cid, params, r, n_k))
        for cid, res in results.items():
            if isinstance(res, Late):
                params, n_k = self._train(cid, r)
                self.in_flight.append(_InFlight(cid, r, start + res.duration, res.duration, params, n_k))

        for cid in on_time:
            self.store.put(record_success(self.store[cid], r, results[cid].duration))
        for cid, res in results.items():
            if not isinstance(res, OnTime):
                self.store.put(record_failure(self.store[cid], r))

        self._deliver_late(r, close)
        self._aggregate(r)
        self.store.tick_stragglers(skip=plan.selected)

        self.clock = close
        self.round = r
        self._outcomes_by_round[r] = outcome
        self._log(plan, outcome)
        return outcome

    def _deliver_late(self, r: int, close: float) -> None:
        keep = []
        for item in sorted(self.in_flight, key=lambda f: (f.arrival_time, f.client_id)):
            if item.arrival_time > close:
                keep.append(item)
                continue
            origin = self._outcomes_by_round.get(item.origin_round)
            if origin is not None:
                origin.results[item.client_id] = Late(item.duration, r)
            self.store.put(record_success(self.store[item.client_id], item.origin_round, item.duration, on_time=False))
            if self.config.strategy == "fedlesscan":
                self.buffer.submit(PendingUpdate(item.client_id, item.params, item.origin_round, item.cardinality))
        self.in_flight = keep

    def _aggregate(self, r: int) -> None:
        c = self.config
        try:
            if c.strategy == "fedlesscan":
                params, _ = aggregate_round(self.buffer, r, c.fedlesscan.tau, renormalize=c.fedlesscan.renormalize)
            else:
                params = fedavg_aggregate(self.buffer.drain())
        except EmptyAggregationError:
            params = self.global_params
        self.global_params = ModelParams(params.weights, r + 1)

    def _log(self, plan: RoundPlan, outcome: RoundOutcome) -> None:
        c = self.config
        r = outcome.round
        sample = c.eval.sample or len(self.partitions)
        acc = evaluate_weighted(
            self.global_params, self.partitions, sample,
            client_rng(c.seed, "eval", r, "eval"), model=self.model,
        )
        counts = {rec.client_id: rec.invocation_count for rec in self.store}
        row = MetricsRow(
            round=r,
            strategy=c.strategy,
            straggler_ratio=c.stragglers.ratio,
            eur=eur(len(plan.selected), outcome.n_on_time),
            accuracy=acc,
            round_wall_time=outcome.round_wall_time,
            round_cost=round_cost(self.cost_model, outcome),
            selected=len(plan.selected),
            on_time=outcome.n_on_time,
            late=outcome.n_late,
            crashed=outcome.n_crashed,
            invocation_counts=counts,
        )
        rep = self.report
        rep.rows.append(row)
        rep.plans.append(plan.to_log())
        cl = plan.cluster_log()
        if cl is not None:
            rep.clusters.append(cl)
        rep.outcomes.append(outcome)
        rep.invocations = counts
        logger.debug("round %d: eur=%.3f acc=%.3f wall=%.2f", r, row.eur, acc, outcome.round_wall_time)

    def run(self) -> ExperimentReport:
        while self.round < self.config.max_rounds:
            self.run_round()
        return self.report


def run_experiment(config: ScenarioConfig) -> ExperimentReport:
    return Simulation(config).run()


def derive_seed(seed: int, strategy: str, ratio: float) -> int:
    """Per-cell seed for sweeps, stable across processes and platforms."""
    digest = hashlib.sha256(f"{seed}:{strategy}:{ratio!r}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
