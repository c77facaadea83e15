"""Per-client behavioral history and the three-tier classification.

Records are immutable; every operation returns a new :class:`ClientRecord`.
A :class:`BehaviorStore` keeps the current record of every client and is the
only mutable piece, written to by the controller between rounds.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Mapping

from .errors import DuplicateMissError, InvalidHistoryError, InvalidMeasurementError

__all__ = [
    "ClientRecord",
    "ClientTier",
    "BehaviorStore",
    "record_invocation",
    "record_success",
    "record_failure",
    "tier_of",
    "tick_cooldown",
]


class ClientTier(enum.Enum):
    ROOKIE = "rookie"
    PARTICIPANT = "participant"
    STRAGGLER = "straggler"


@dataclass(frozen=True)
class ClientRecord:
    client_id: Hashable
    training_times: tuple[float, ...] = ()
    missed_rounds: tuple[int, ...] = ()
    cooldown: int = 0
    invocation_count: int = 0
    failure_count: int = 0
    # Cooldown assigned at the latest miss; outlives the countdown so a
    # repeat offender escalates. Cleared only by an on-time success.
    cooldown_level: int = 0

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "training_times": list(self.training_times),
            "missed_rounds": list(self.missed_rounds),
            "cooldown": self.cooldown,
            "invocation_count": self.invocation_count,
            "failure_count": self.failure_count,
            "cooldown_level": self.cooldown_level,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClientRecord":
        return cls(
            client_id=data["client_id"],
            training_times=tuple(float(t) for t in data.get("training_times", ())),
            missed_rounds=tuple(int(r) for r in data.get("missed_rounds", ())),
            cooldown=int(data.get("cooldown", 0)),
            invocation_count=int(data.get("invocation_count", 0)),
            failure_count=int(data.get("failure_count", 0)),
            cooldown_level=int(data.get("cooldown_level", 0)),
        )


def _check_round(round: int) -> None:
    if round < 1:
        raise ValueError(f"rounds are 1-based, got {round}")


def record_invocation(record: ClientRecord) -> ClientRecord:
    """Count one invocation. Called when the client is selected."""
    return replace(record, invocation_count=record.invocation_count + 1)


def record_success(
    record: ClientRecord, round: int, training_time: float, *, on_time: bool = True
) -> ClientRecord:
    """Record a finished local training for ``round``.

    The measured time is appended and ``round`` is dropped from the missed
    rounds if present. Only an on-time success zeroes the cooldown; a late
    arrival (``on_time=False``) corrects the history but keeps the cooldown
    escalation applied when the round closed.
    """
    _check_round(round)
    if not (training_time > 0 and math.isfinite(training_time)):
        raise InvalidMeasurementError(f"training time must be positive, got {training_time!r}")
    missed = tuple(r for r in record.missed_rounds if r != round)
    return replace(
        record,
        training_times=record.training_times + (float(training_time),),
        missed_rounds=missed,
        cooldown=0 if on_time else record.cooldown,
        cooldown_level=0 if on_time else record.cooldown_level,
    )


def record_failure(record: ClientRecord, round: int) -> ClientRecord:
    """Mark ``round`` as missed and escalate the cooldown.

    Cooldown goes 0 -> 1 on a first miss and doubles on every further miss
    until an on-time success. The doubling starts from the larger of the
    remaining cooldown and the last assigned one, so a client that served its
    cooldown and misses again still escalates.
    """
    _check_round(round)
    if round in record.missed_rounds:
        raise DuplicateMissError(f"client {record.client_id!r} already missed round {round}")
    if record.missed_rounds and round < record.missed_rounds[-1]:
        raise InvalidHistoryError(
            f"round {round} precedes last missed round {record.missed_rounds[-1]}"
        )
    level = max(record.cooldown, record.cooldown_level)
    cooldown = 1 if level == 0 else level * 2
    return replace(
        record,
        missed_rounds=record.missed_rounds + (round,),
        cooldown=cooldown,
        cooldown_level=cooldown,
        failure_count=record.failure_count + 1,
    )


def tier_of(record: ClientRecord) -> ClientTier:
    if record.invocation_count == 0:
        return ClientTier.ROOKIE
    if record.cooldown > 0:
        return ClientTier.STRAGGLER
    return ClientTier.PARTICIPANT


def tick_cooldown(record: ClientRecord) -> ClientRecord:
    """Count down one round spent in the straggler tier."""
    if record.cooldown == 0:
        return record
    return replace(record, cooldown=record.cooldown - 1)


@dataclass
class BehaviorStore:
    """In-memory map of client id to :class:`ClientRecord`.

    Snapshots are newline-delimited JSON, one object per client.
    """

    records: dict = field(default_factory=dict)

    @classmethod
    def for_clients(cls, client_ids: Iterable[Hashable]) -> "BehaviorStore":
        return cls({cid: ClientRecord(cid) for cid in client_ids})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClientRecord]:
        return iter(self.records.values())

    def __getitem__(self, client_id: Hashable) -> ClientRecord:
        return self.records[client_id]

    def __contains__(self, client_id: Hashable) -> bool:
        return client_id in self.records

    def put(self, record: ClientRecord) -> None:
        self.records[record.client_id] = record

    def snapshot(self) -> dict:
        """Shallow copy; records are immutable so this is a consistent view."""
        return dict(self.records)

    def tick_stragglers(self, skip: Iterable[Hashable] = ()) -> None:
        skip = set(skip)
        for cid, rec in list(self.records.items()):
            if cid not in skip and rec.cooldown > 0:
                self.records[cid] = tick_cooldown(rec)

    def dumps(self) -> str:
        return "".join(
            json.dumps(rec.to_dict(), sort_keys=True) + "\n" for rec in self.records.values()
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "BehaviorStore":
        store = cls()
        for line in text.splitlines():
            if line.strip():
                store.put(ClientRecord.from_dict(json.loads(line)))
        return store

    @classmethod
    def load(cls, path: str | Path) -> "BehaviorStore":
        return cls.loads(Path(path).read_text())
