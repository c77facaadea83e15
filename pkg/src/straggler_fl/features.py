"""Clustering features derived from a client's behavioral history."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

from .behavior import ClientRecord
from .errors import EmptySeriesError, InvalidHistoryError, NoHistoryError

__all__ = ["ClientFeatures", "ema", "missed_round_ema", "features_for"]

DEFAULT_ALPHA = 0.5


@dataclass(frozen=True)
class ClientFeatures:
    client_id: Hashable
    training_ema: float
    missed_round_ema: float
    total_ema: float
    invocation_count: int = 0


def ema(values: Sequence[float], alpha: float = DEFAULT_ALPHA) -> float:
    """Exponential moving average seeded with the first value.

    ``s_1 = v_1`` and ``s_i = alpha * v_i + (1 - alpha) * s_{i-1}``, so the
    last element carries the largest weight.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if len(values) == 0:
        raise EmptySeriesError("cannot take the EMA of an empty series")
    it = iter(values)
    s = float(next(it))
    for v in it:
        # incremental form: exact for constant runs, never overshoots v
        s += alpha * (float(v) - s)
    return s


def missed_round_ema(
    missed_rounds: Sequence[int], current_round: int, alpha: float = DEFAULT_ALPHA
) -> float:
    """EMA of ``missed / current_round``; 0 when nothing was missed.

    The ratio of an old miss shrinks as training advances, so the penalty
    decays for clients that became reliable.
    """
    if current_round < 1:
        raise InvalidHistoryError(f"current round must be >= 1, got {current_round}")
    if len(missed_rounds) == 0:
        return 0.0
    prev = 0
    for r in missed_rounds:
        if r <= prev:
            raise InvalidHistoryError(f"missed rounds must be strictly increasing: {list(missed_rounds)}")
        prev = r
    if prev > current_round:
        raise InvalidHistoryError(f"missed round {prev} is after current round {current_round}")
    return ema([r / current_round for r in missed_rounds], alpha)


def features_for(
    record: ClientRecord,
    current_round: int,
    alpha: float = DEFAULT_ALPHA,
    max_training_time: float = 1.0,
) -> ClientFeatures:
    """Compute trainingEma, missedRoundEma and totalEma for one client.

    A client that was invoked but never reported a training time (it crashed
    every time) is assigned ``max_training_time`` as its training EMA.
    """
    if record.training_times:
        t_ema = ema(record.training_times, alpha)
    elif record.invocation_count > 0:
        t_ema = float(max_training_time)
    else:
        raise NoHistoryError(f"client {record.client_id!r} has no behavioral history")
    m_ema = missed_round_ema(record.missed_rounds, current_round, alpha)
    return ClientFeatures(
        client_id=record.client_id,
        training_ema=t_ema,
        missed_round_ema=m_ema,
        total_ema=t_ema + m_ema * max_training_time,
        invocation_count=record.invocation_count,
    )
