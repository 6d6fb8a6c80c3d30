"""Messages exchanged between sensor nodes and the fusion center (FC).

Per slot every node sends one :class:`Bid`; the FC answers the winner with a
:class:`ScheduleNotice`.  Nodes report :class:`EmptyFlag` only when their
post-decision buffers switch between empty and non-empty, and the FC sends a
:class:`RsFlag` when exactly one node is non-empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

__all__ = [
    "Bid",
    "EmptyFlag",
    "ScheduleNotice",
    "RsFlag",
    "FcState",
    "fc_schedule",
    "fc_representative_check",
    "FusionCenter",
    "ProtocolError",
]


class ProtocolError(AssertionError):
    pass


@dataclass(frozen=True, slots=True)
class Bid:
    node: int
    value: float
    p_star: int


@dataclass(frozen=True, slots=True)
class EmptyFlag:
    node: int
    empty: bool


@dataclass(frozen=True, slots=True)
class ScheduleNotice:
    node: int


@dataclass(frozen=True, slots=True)
class RsFlag:
    """Tells ``node`` that the global post-decision state is its representative state.

    The FC only holds emptiness bits, so ``q``/``b`` are left unset on the
    wire; the receiving node knows its own post-decision state.
    """

    node: int
    q: int | None = None
    b: int | None = None


def fc_schedule(bids: Sequence[float]) -> int:
    """Index of the largest bid, lowest index on ties. Never abstains."""
    if len(bids) == 0:
        raise ValueError("no bids")
    best, best_v = 0, bids[0]
    for i in range(1, len(bids)):
        if bids[i] > best_v:
            best, best_v = i, bids[i]
    return best


@dataclass
class FcState:
    """Bit map of empty nodes (True = both buffers empty) and the last RS target."""

    empty: list
    nonempty_count: int = 0
    last_rs: int | None = None

    @classmethod
    def all_empty(cls, N: int) -> "FcState":
        return cls([True] * N, 0)

    def apply(self, msg: EmptyFlag) -> None:
        if self.empty[msg.node] == msg.empty:
            raise ProtocolError(f"node {msg.node} sent an EmptyFlag without a status change")
        self.empty[msg.node] = msg.empty
        self.nonempty_count += -1 if msg.empty else 1

    def sole_nonempty(self) -> int | None:
        if self.nonempty_count != 1:
            return None
        return self.empty.index(False)


def fc_representative_check(fc: FcState, post_states_known=None) -> RsFlag | None:
    """RS flag for the single non-empty node, or ``None``.

    ``post_states_known`` optionally replaces the FC's bit map with an
    explicit per-node empty/non-empty sequence (True = empty).
    """
    if post_states_known is not None:
        nonempty = [i for i, e in enumerate(post_states_known) if not e]
        node = nonempty[0] if len(nonempty) == 1 else None
    else:
        node = fc.sole_nonempty()
    fc.last_rs = node
    return None if node is None else RsFlag(node)


@dataclass
class FusionCenter:
    """Collects bids, runs the auction and tracks the empty-buffer bit map."""

    N: int
    scheduler: Callable[[Sequence[float]], int] = fc_schedule
    state: FcState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = FcState.all_empty(self.N)

    def auction(self, bids: Sequence[Bid]) -> ScheduleNotice:
        seen = set()
        values = [0.0] * self.N
        for bid in bids:
            if bid.node in seen:
                raise ProtocolError(f"node {bid.node} submitted two bids in one slot")
            seen.add(bid.node)
            values[bid.node] = bid.value
        if len(seen) != self.N:
            raise ProtocolError("missing bids")
        return ScheduleNotice(self.scheduler(values))

    def receive(self, msg: EmptyFlag) -> None:
        self.state.apply(msg)

    def representative_check(self) -> RsFlag | None:
        return fc_representative_check(self.state)
