"""Per-client invocation results and the round outcome they make up."""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["OnTime", "Late", "Crashed", "RoundOutcome"]


@dataclass(frozen=True)
class OnTime:
    duration: float


@dataclass(frozen=True)
class Late:
    duration: float
    arrival_round: int | None = None


@dataclass(frozen=True)
class Crashed:
    pass


@dataclass
class RoundOutcome:
    """What happened to every client invoked in one round.

    ``results`` maps client id to :class:`OnTime`, :class:`Late` or
    :class:`Crashed` in selection order.
    """

    round: int
    results: dict = field(default_factory=dict)
    round_wall_time: float = 0.0

    def _count(self, kind) -> int:
        return sum(isinstance(r, kind) for r in self.results.values())

    @property
    def n_on_time(self) -> int:
        return self._count(OnTime)

    @property
    def n_late(self) -> int:
        return self._count(Late)

    @property
    def n_crashed(self) -> int:
        return self._count(Crashed)
