"""Round-utilization, fairness and FaaS billing metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UndefinedRatioError
from .outcomes import Crashed, Late, OnTime, RoundOutcome

__all__ = ["CostModel", "MetricsRow", "eur", "bias", "billed_duration", "round_cost"]


def eur(selected: int, on_time: int) -> float:
    """Effective update ratio: on-time contributors over selected clients."""
    if selected <= 0:
        raise UndefinedRatioError("EUR is undefined for a round with no selected clients")
    if not 0 <= on_time <= selected:
        raise ValueError(f"on_time={on_time} outside 0..{selected}")
    return on_time / selected


def bias(invocation_counts: Sequence[int]) -> int:
    """Spread between the most and least invoked clients."""
    if len(invocation_counts) == 0:
        raise ValueError("bias needs at least one client")
    return max(invocation_counts) - min(invocation_counts)


@dataclass(frozen=True)
class CostModel:
    """Pay-per-use pricing: a fee per invocation plus GB-seconds.

    The defaults are shaped after public cloud-function list prices and are
    placeholders; compare strategies relatively, not in absolute currency.
    """

    price_per_invocation: float = 4e-7
    price_per_gb_second: float = 2.5e-5
    allocated_memory: float = 2.0
    duration_rounding: float = 0.1

    def __post_init__(self):
        if min(self.price_per_invocation, self.price_per_gb_second, self.allocated_memory) < 0:
            raise ValueError("prices and memory must be non-negative")
        if self.duration_rounding < 0:
            raise ValueError("duration_rounding must be non-negative")

    def invocation_cost(self, seconds: float) -> float:
        return self.price_per_invocation + seconds * self.allocated_memory * self.price_per_gb_second


def _round_up(seconds: float, step: float) -> float:
    if step <= 0:
        return seconds
    # round() absorbs float noise such as 10.0 / 0.1 == 100.00000000000001
    return math.ceil(round(seconds / step, 9)) * step


def billed_duration(model: CostModel, result, round_wall_time: float) -> float:
    """Seconds billed for one invocation.

    On-time clients pay for their own duration rounded up to the billing
    step. Late and crashed clients are billed for the whole round.
    """
    if isinstance(result, OnTime):
        return _round_up(result.duration, model.duration_rounding)
    if isinstance(result, (Late, Crashed)):
        return _round_up(round_wall_time, model.duration_rounding)
    raise TypeError(f"unknown result {result!r}")


def round_cost(model: CostModel, outcome: RoundOutcome) -> float:
    return math.fsum(
        model.invocation_cost(billed_duration(model, r, outcome.round_wall_time))
        for r in outcome.results.values()
    )


@dataclass
class MetricsRow:
    round: int
    strategy: str
    straggler_ratio: float
    eur: float
    accuracy: float
    round_wall_time: float
    round_cost: float
    selected: int
    on_time: int
    late: int
    crashed: int
    invocation_counts: dict = field(default_factory=dict, repr=False)

    CSV_COLUMNS = (
        "round", "strategy", "straggler_ratio", "eur", "accuracy",
        "round_wall_time", "round_cost", "selected", "on_time", "late", "crashed",
    )

    def csv_values(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]
