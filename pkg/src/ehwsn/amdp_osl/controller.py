"""Distributed controller: per-node agents plus fusion center, run slot by slot.

Slot ``t`` follows the implementation flow of the scheme:

1. every node observes ``(h, q, b)``, computes its energy and bid, and sends
   a :class:`~.protocol.Bid`;
2. the FC picks the winner, notifies it, and sends an RS flag if the previous
   post-decision state is representative; the winner transmits;
3. at the end of the slot nodes update value entries (RS flag holder only)
   and multipliers, and report emptiness changes of their new post-decision
   state.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..metrics import MetricAccumulator
from ..mdp_core import pre_decision_node
from ..sim_env import Environment, NodeState, SlotOutcome, SystemModel
from .allocation import NodeRadio, compute_bid, optimal_power
from .learning import (
    ExplorationSchedule,
    PerNodeValueTable,
    SlotObservation,
    StepSizeSchedule,
    lm_update,
    value_derivatives,
    value_update,
)
from .protocol import Bid, EmptyFlag, FusionCenter, ProtocolError, RsFlag

__all__ = [
    "TRACE_FIELDS",
    "NodeAgent",
    "SlotRecord",
    "OslController",
    "OslRun",
    "simulate_osl",
]

TRACE_FIELDS = ("t", "node", "h", "q", "b", "p_star", "bid", "scheduled", "served", "eta", "rs_flag")


class NodeAgent:
    """Local learner of one node: its value table, multiplier and bookkeeping."""

    def __init__(self, n: int, model: SystemModel, schedule: StepSizeSchedule,
                 eta0: float = 0.0, learn_eta: bool = True, table: PerNodeValueTable | None = None,
                 explore: ExplorationSchedule | None = None, rng: np.random.Generator | None = None):
        cfg = model.cfg
        self.n = n
        self.cfg = cfg
        self.radio = NodeRadio(model, n)
        self.schedule = schedule
        self.table = table if table is not None else PerNodeValueTable(cfg.Q_max, cfg.B_max)
        self.eta = float(eta0)
        self.learn_eta = learn_eta
        self.post = (0, 0)
        self.empty = True
        self.last_arrivals = 0
        self.last_harvest = 0
        self.ref_harvest = 0
        self.ref_counts = [0] * (cfg.B_max + 1)
        self.updates = 0
        self.explore = explore if explore is not None else ExplorationSchedule(0.0)
        self.rng = rng if rng is not None else np.random.default_rng()

    def make_bid(self, s: NodeState, t: int = 0) -> Bid:
        derivs = value_derivatives(self.table, s.q, s.b)
        if s.q and s.b and self.explore.c and self.rng.random() < self.explore(t):
            top = min(s.b, math.ceil(self.radio.qcap[s.h][s.q]))
            p = int(self.rng.integers(0, top + 1))
        else:
            p = optimal_power(s, self.table, self.eta, self.radio, derivs)
        return Bid(self.n, compute_bid(s, self.table, self.eta, p, self.radio, derivs), p)

    def end_of_slot(self, s: NodeState, p: int, rate: int, rs: bool, t: int) -> EmptyFlag | None:
        served = min(s.q, rate)
        if rs:
            q, b = self.post
            if pre_decision_node(q, b, self.last_arrivals, self.last_harvest, self.cfg) != (s.q, s.b):
                raise ProtocolError(f"node {self.n}: observed state disagrees with post-decision bookkeeping")
            obs = SlotObservation(self.last_arrivals, self.last_harvest, s.h, p, rate, self.ref_harvest)
            step = self.schedule.value(self.table.counts[q][b])
            cost = self.radio.omega_over_lambda + self.eta * self.cfg.D_max
            value_update(self.table, self.post, obs, self.eta, step, self.cfg, cost, self.ref_counts)
            self.updates += 1
        if self.learn_eta:
            self.eta = lm_update(self.eta, s.q, served, self.schedule.eta(t), self.cfg.D_max)
        self.post = (s.q - served, s.b - p)
        empty = self.post == (0, 0)
        if empty != self.empty:
            self.empty = empty
            return EmptyFlag(self.n, empty)
        return None

    def observe(self, outcome: SlotOutcome) -> None:
        self.last_arrivals = outcome.sensed + outcome.dropped_sensing
        self.last_harvest = outcome.harvested
        if self.post == (0, 0):
            # The harvest after the latest reference visit is correlated with
            # the excursion being learned, so the reference term averages
            # V(0, e) over every harvest seen there instead.
            self.ref_harvest = outcome.harvested
            self.ref_counts[min(outcome.harvested, self.cfg.B_max)] += 1


@dataclass(slots=True)
class SlotRecord:
    t: int
    winner: int
    p: list
    bids: list
    outcomes: list
    rs: RsFlag | None
    empty_flags: list
    messages: int


class OslController:
    """Agents, fusion center and environment wired together."""

    def __init__(self, model: SystemModel, rng: np.random.Generator,
                 schedule: StepSizeSchedule | None = None, eta0=0.0, learn_eta: bool = True,
                 scheduler=None, initial: Sequence[NodeState] | None = None,
                 explore: ExplorationSchedule | None = None):
        schedule = schedule or StepSizeSchedule()
        explore = explore if explore is not None else ExplorationSchedule()
        N = model.N
        eta0 = np.broadcast_to(np.asarray(eta0, dtype=float), (N,))
        self.model = model
        node_rngs = rng.spawn(N)
        self.env = Environment(model, rng, initial)
        self.agents = [NodeAgent(n, model, schedule, eta0[n], learn_eta, explore=explore, rng=node_rngs[n])
                       for n in range(N)]
        self.fc = FusionCenter(N) if scheduler is None else FusionCenter(N, scheduler)
        for n, s in enumerate(self.env.states):
            # nodes that start non-empty report it before the first slot
            if (s.q, s.b) != (0, 0):
                self.agents[n].post = (s.q, s.b)
                self.agents[n].empty = False
                self.fc.receive(EmptyFlag(n, False))
        self.messages = Counter()
        self.t = 0

    def run_slot(self) -> SlotRecord:
        t = self.t
        states = self.env.states
        agents = self.agents
        bids = [a.make_bid(s, t) for a, s in zip(agents, states)]
        notice = self.fc.auction(bids)
        rs = self.fc.representative_check()
        w = notice.node
        p = [0] * len(agents)
        p[w] = bids[w].p_star
        outcomes = self.env.step(p)
        flags = []
        model = self.model
        for n, (a, s) in enumerate(zip(agents, states)):
            f = a.end_of_slot(s, p[n], model.rate(n, s.h, p[n]), rs is not None and rs.node == n, t)
            if f is not None:
                self.fc.receive(f)
                flags.append(f)
        for a, o in zip(agents, outcomes):
            a.observe(o)
        n_msgs = len(bids) + 1 + (rs is not None) + len(flags)
        m = self.messages
        m["bid"] += len(bids)
        m["schedule"] += 1
        m["rs_flag"] += rs is not None
        m["empty_flag"] += len(flags)
        self.t = t + 1
        return SlotRecord(t, w, p, bids, outcomes, rs, flags, n_msgs)

    @property
    def eta(self) -> list[float]:
        return [a.eta for a in self.agents]

    def tables(self) -> list[np.ndarray]:
        return [a.table.as_array() for a in self.agents]


def trace_rows(rec: SlotRecord, states: Sequence[NodeState], etas: Sequence[float]) -> list[tuple]:
    rows = []
    for n, (s, bid, o) in enumerate(zip(states, rec.bids, rec.outcomes)):
        rows.append((rec.t, n, s.h, s.q, s.b, bid.p_star, bid.value, int(rec.winner == n),
                     o.served, etas[n], int(rec.rs is not None and rec.rs.node == n)))
    return rows


@dataclass
class OslRun:
    acc: MetricAccumulator
    eta: list
    tables: list
    messages: Counter
    max_messages_excess: int
    snapshots: dict = field(default_factory=dict, repr=False)
    eta_trace: list = field(default_factory=list, repr=False)
    controller: OslController | None = field(default=None, repr=False)


def simulate_osl(model: SystemModel, horizon: int, seed=0, schedule: StepSizeSchedule | None = None,
                 eta0=0.0, learn_eta: bool = True, warmup_frac: float = 0.1,
                 snapshot_at: Sequence[int] = (), eta_every: int = 0, trace=None,
                 scheduler=None, explore: ExplorationSchedule | None = None, visits: set | None = None) -> OslRun:
    """Run the learner for ``horizon`` slots and collect steady-state metrics.

    ``snapshot_at`` lists slot counts after which all value tables are copied;
    ``eta_every`` > 0 samples the multipliers every that many slots; ``trace``
    (a list) receives one :data:`TRACE_FIELDS` tuple per node per slot;
    ``visits`` (a set) collects the joint states seen after warm-up.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ctl = OslController(model, rng, schedule, eta0, learn_eta, scheduler, explore=explore)
    acc = MetricAccumulator(model.N, warmup=int(warmup_frac * horizon))
    snaps = set(snapshot_at)
    snapshots, eta_trace = {}, []
    excess = 0
    N = model.N
    warm = acc.warmup
    for _ in range(horizon):
        states = ctl.env.states
        if visits is not None and ctl.t >= warm:
            visits.add(tuple(states))
        rec = ctl.run_slot()
        acc.record(states, rec.outcomes)
        excess = max(excess, rec.messages - (N + 2 + len(rec.empty_flags)))
        if trace is not None:
            trace.extend(trace_rows(rec, states, ctl.eta))
        if ctl.t in snaps:
            snapshots[ctl.t] = ctl.tables()
        if eta_every and ctl.t % eta_every == 0:
            eta_trace.append(ctl.eta)
    return OslRun(acc, ctl.eta, ctl.tables(), ctl.messages, excess, snapshots, eta_trace, ctl)
