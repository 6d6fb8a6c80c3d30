"""Per-node value tables, step sizes and the two stochastic-approximation updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..mdp_core import pre_decision_node

__all__ = [
    "StepSizeSchedule",
    "ExplorationSchedule",
    "PerNodeValueTable",
    "SlotObservation",
    "value_derivatives",
    "value_update",
    "reference_value",
    "lm_update",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSizeSchedule:
    """``c/(1+k)**alpha`` sequences for the value tables (fast) and multipliers (slow).

    ``0.5 < alpha_v < alpha_eta <= 1`` makes both sequences non-summable and
    square-summable with the multiplier steps vanishing relative to the value
    steps.
    """

    alpha_v: float = 0.6
    alpha_eta: float = 0.9
    c_v: float = 1.0
    c_eta: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.alpha_v < self.alpha_eta <= 1.0:
            raise ValueError("need 0.5 < alpha_v < alpha_eta <= 1")
        if self.c_v <= 0 or self.c_eta <= 0:
            raise ValueError("step-size scales must be positive")

    def value(self, k: int) -> float:
        return self.c_v / (1.0 + k) ** self.alpha_v

    def eta(self, t: int) -> float:
        return self.c_eta / (1.0 + t) ** self.alpha_eta


@dataclass(frozen=True)
class ExplorationSchedule:
    """Probability ``min(1, c/(1+t)**beta)`` of trying a random admissible energy in slot ``t``.

    Starting from an all-zero table the greedy choice never leaves energy in
    a non-empty queue, so those table entries would stay unvisited without
    some exploration. ``c = 0`` disables it.
    """

    c: float = 0.3
    beta: float = 0.3

    def __post_init__(self):
        if self.c < 0 or self.beta < 0:
            raise ValueError("exploration parameters must be nonnegative")

    def __call__(self, t: int) -> float:
        if self.c == 0:
            return 0.0
        return min(1.0, self.c / (1.0 + t) ** self.beta)


class PerNodeValueTable:
    """Values ``V[q][b]`` over post-decision (queue, battery), anchored at ``V[0][0] = 0``."""

    __slots__ = ("Q_max", "B_max", "values", "counts")

    def __init__(self, Q_max: int, B_max: int, values=None):
        self.Q_max = Q_max
        self.B_max = B_max
        if values is None:
            self.values = [[0.0] * (B_max + 1) for _ in range(Q_max + 1)]
        else:
            self.values = [list(map(float, row)) for row in np.asarray(values, dtype=float)]
            if len(self.values) != Q_max + 1 or any(len(r) != B_max + 1 for r in self.values):
                raise ValueError("value grid has the wrong shape")
            self.values[0][0] = 0.0
        self.counts = [[0] * (B_max + 1) for _ in range(Q_max + 1)]

    def __getitem__(self, qb):
        q, b = qb
        return self.values[q][b]

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    def copy(self) -> "PerNodeValueTable":
        t = PerNodeValueTable(self.Q_max, self.B_max, self.values)
        t.counts = [row[:] for row in self.counts]
        return t


def value_derivatives(table: PerNodeValueTable, q: int, b: int) -> tuple[float, float]:
    """Finite-difference slopes of the table in queue and battery.

    Central differences inside the grid, one-sided on its edges.
    """
    v = table.values
    qm, bm = table.Q_max, table.B_max
    if qm == 0:
        dq = 0.0
    elif q == 0:
        dq = v[1][b] - v[0][b]
    elif q == qm:
        dq = v[q][b] - v[q - 1][b]
    else:
        dq = 0.5 * (v[q + 1][b] - v[q - 1][b])
    row = v[q]
    if bm == 0:
        db = 0.0
    elif b == 0:
        db = row[1] - row[0]
    elif b == bm:
        db = row[b] - row[b - 1]
    else:
        db = 0.5 * (row[b + 1] - row[b - 1])
    return dq, db


@dataclass(frozen=True, slots=True)
class SlotObservation:
    """What node ``n`` knows at the end of a slot when its entry is updated.

    ``arrivals``/``harvest`` happened after the representative post-decision
    state; ``h``, ``p`` and ``rate`` describe this slot's transmission;
    ``ref_harvest`` is the harvest that followed the latest visit to the empty
    post-decision state.
    """

    arrivals: int
    harvest: int
    h: int
    p: int
    rate: int
    ref_harvest: int = 0


def reference_value(table: PerNodeValueTable, ref_harvest: int, ref_weights=None) -> float:
    """``V(0, E)`` at the reference harvest, or its average under ``ref_weights``.

    ``ref_weights[e]`` counts how often harvest ``e`` followed the empty
    post-decision state; harvests above ``B_max`` are read at ``B_max``.
    """
    row = table.values[0]
    if ref_weights is not None:
        total = sum(ref_weights)
        if total > 0:
            return sum(w * row[e] for e, w in enumerate(ref_weights) if w) / total
        return 0.0
    if ref_harvest > table.B_max:
        log.debug("reference harvest %d clipped to %d", ref_harvest, table.B_max)
        ref_harvest = table.B_max
    return row[ref_harvest]


def value_update(table: PerNodeValueTable, rs: tuple[int, int], obs: SlotObservation, eta: float,
                 step: float, cfg, cost_per_packet: float, ref_weights=None) -> float:
    """One stochastic-approximation step on entry ``rs`` of ``table``.

    ``cost_per_packet`` is ``omega/lambda_a + eta*D_max``.  The pre-decision
    state is rebuilt from ``rs`` and the observed arrivals, the slot's
    transmission is applied, and the sampled relative cost-to-go
    ``eta*Q - cost_per_packet*served + V(next post state) - V(0, E_ref)``
    is blended in with weight ``step``.  See :func:`reference_value` for the
    last term. Returns the new entry.
    """
    q, b = rs
    v = table.values
    Q, B = pre_decision_node(q, b, obs.arrivals, obs.harvest, cfg)
    served = min(Q, obs.rate)
    nq, nb = Q - served, B - obs.p
    if nb < 0:
        log.warning("post-decision battery %d left the grid; clipped", nb)
        nb = 0
    ref = reference_value(table, obs.ref_harvest, ref_weights)
    target = eta * Q - cost_per_packet * served + v[nq][nb] - ref
    new = (1.0 - step) * v[q][b] + step * target
    v[q][b] = new
    table.counts[q][b] += 1
    v[0][0] = 0.0
    return v[q][b]


def lm_update(eta: float, q: int, r: int, step: float, D_max: float) -> float:
    """Projected multiplier step along the sampled delay-constraint slack ``q - D_max*r``."""
    return max(0.0, eta + step * (q - D_max * r))
