"""Slotted environment for an energy-harvesting sensor network.

Each node carries a channel-state index ``h`` (finite-state Markov chain), a
data queue ``q`` in packets and a battery ``b`` in energy units.  A slot goes:
the scheduled node spends ``p`` units transmitting, the remaining battery pays
for sensing the slot's arrivals, harvested energy is added, and the channel
moves one Markov step.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ChannelModel",
    "ArrivalModel",
    "EnvConfig",
    "NodeState",
    "SlotOutcome",
    "SystemModel",
    "Environment",
    "paper_channel",
    "poisson_pmf",
    "two_point_energy_pmf",
    "truncated_poisson_pmf",
    "continuous_rate",
    "transmit_rate",
    "sensing_capacity",
    "sensing_energy",
    "sample_channel_next",
    "step_node",
    "step_system",
    "check_action",
]

_EPS = 1e-9


@dataclass(frozen=True)
class ChannelModel:
    """Finite-state Markov channel.

    ``gains`` are raw power gains; ``EnvConfig.gain_scale`` multiplies them
    when a rate is computed.
    """

    states: tuple[str, ...]
    gains: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "transition", trans)
        k = len(self.states)
        if gains.shape != (k,) or trans.shape != (k, k):
            raise ValueError("gains/transition shapes do not match states")
        if np.any(gains <= 0):
            raise ValueError("channel gains must be positive")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix must be row-stochastic")
        if not self._irreducible():
            raise ValueError("channel transition matrix is not irreducible")
        cdf = np.cumsum(trans, axis=1)
        cdf[:, -1] = 1.0
        object.__setattr__(self, "_cdf", [list(row) for row in cdf])

    @property
    def n_states(self) -> int:
        return len(self.states)

    def _irreducible(self) -> bool:
        k = len(self.states)
        adj = self.transition > 0
        for start in range(k):
            seen = {start}
            frontier = [start]
            while frontier:
                i = frontier.pop()
                for j in np.flatnonzero(adj[i]):
                    if j not in seen:
                        seen.add(int(j))
                        frontier.append(int(j))
            if len(seen) != k:
                return False
        return True

    def stationary(self) -> np.ndarray:
        k = self.n_states
        a = np.vstack([self.transition.T - np.eye(k), np.ones(k)])
        rhs = np.zeros(k + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def next_from_uniform(self, h: int, u: float) -> int:
        return bisect_right(self._cdf[h], u)

    @classmethod
    def iid(cls, states, gains, probs) -> "ChannelModel":
        """Memoryless channel: every row of the transition matrix is ``probs``."""
        probs = np.asarray(probs, dtype=float)
        return cls(tuple(states), np.asarray(gains, float), np.tile(probs, (len(probs), 1)))


def paper_channel() -> ChannelModel:
    """Three-state Bad/Normal/Good channel used in the experiments."""
    return ChannelModel(
        states=("B", "N", "G"),
        gains=np.array([2e-13, 4e-13, 6e-13]),
        transition=np.array([
            [0.3, 0.7, 0.0],
            [0.25, 0.5, 0.25],
            [0.0, 0.7, 0.3],
        ]),
    )


def poisson_pmf(lam: float, a_max: int) -> np.ndarray:
    """Poisson(lam) on ``0..a_max`` with the upper tail folded into ``a_max``."""
    if lam < 0:
        raise ValueError("arrival rate must be nonnegative")
    pmf = np.zeros(a_max + 1)
    if lam == 0:
        pmf[0] = 1.0
        return pmf
    for k in range(a_max):
        pmf[k] = math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))
    pmf[-1] = max(0.0, 1.0 - pmf[:-1].sum())
    return pmf / pmf.sum()


def truncated_poisson_pmf(lam: float, e_max: int) -> np.ndarray:
    """Alternative harvest law: Poisson(lam) folded at ``e_max``."""
    return poisson_pmf(lam, e_max)


def two_point_energy_pmf(lam_e: float) -> np.ndarray:
    """Harvest either ``2*lam_e`` units or nothing, each with probability 1/2.

    ``2*lam_e`` need not be an integer; the nonzero branch is split between
    its floor and ceiling so the mean stays exactly ``lam_e``.
    """
    if lam_e < 0:
        raise ValueError("energy rate must be nonnegative")
    hi = 2.0 * lam_e
    lo_int = math.floor(hi + _EPS)
    frac = hi - lo_int
    if frac < _EPS:
        frac = 0.0
    pmf = np.zeros(lo_int + 2)
    pmf[0] += 0.5
    pmf[lo_int] += 0.5 * (1.0 - frac)
    pmf[lo_int + 1] += 0.5 * frac
    while len(pmf) > 1 and pmf[-1] == 0.0:
        pmf = pmf[:-1]
    return pmf


@dataclass(frozen=True)
class ArrivalModel:
    """Per-slot packet-arrival and energy-harvest laws (i.i.d. over slots)."""

    packet_dist: np.ndarray
    energy_dist: np.ndarray

    def __post_init__(self):
        for name in ("packet_dist", "energy_dist"):
            pmf = np.asarray(getattr(self, name), dtype=float)
            if pmf.ndim != 1 or len(pmf) == 0:
                raise ValueError(f"{name} must be a 1-d pmf")
            if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} is not normalized")
            object.__setattr__(self, name, pmf)
        for name in ("packet", "energy"):
            cdf = np.cumsum(getattr(self, f"{name}_dist"))
            cdf[-1] = 1.0
            object.__setattr__(self, f"_{name}_cdf", list(cdf))

    @property
    def lambda_a(self) -> float:
        return float(np.dot(np.arange(len(self.packet_dist)), self.packet_dist))

    @property
    def lambda_e(self) -> float:
        return float(np.dot(np.arange(len(self.energy_dist)), self.energy_dist))

    @property
    def a_max(self) -> int:
        return len(self.packet_dist) - 1

    @property
    def e_max(self) -> int:
        return len(self.energy_dist) - 1

    def packets_from_uniform(self, u: float) -> int:
        return bisect_right(self._packet_cdf, u)

    def energy_from_uniform(self, u: float) -> int:
        return bisect_right(self._energy_cdf, u)

    @classmethod
    def poisson_two_point(cls, lambda_a: float, lambda_e: float, a_max: int) -> "ArrivalModel":
        return cls(poisson_pmf(lambda_a, a_max), two_point_energy_pmf(lambda_e))


@dataclass(frozen=True)
class EnvConfig:
    """Physical and buffer parameters.

    Per-node quantities (``xi``, ``ber``, ``omega``) are tuples of length ``N``.
    Energies are in units, time in slots of ``tau`` seconds.
    """

    N: int = 1
    Q_max: int = 5
    B_max: int = 10
    tau: float = 1.0
    W: float = 3e5
    K: float = 1e5
    N0: float = 1e-16
    xi: tuple[float, ...] = (0.283,)
    gamma: float = 1.0
    ber: tuple[float, ...] = (1e-3,)
    D_max: float = 3.0
    omega: tuple[float, ...] = (1.0,)
    gain_scale: float = 100.0

    def __post_init__(self):
        for name in ("N", "Q_max", "B_max"):
            v = getattr(self, name)
            if int(v) != v or v < (1 if name == "N" else 0):
                raise ValueError(f"{name} must be a nonnegative integer (N >= 1)")
            object.__setattr__(self, name, int(v))
        for name in ("tau", "W", "K", "N0", "gamma", "D_max", "gain_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("xi", "ber", "omega"):
            v = getattr(self, name)
            v = (float(v),) * self.N if np.isscalar(v) else tuple(float(x) for x in v)
            if len(v) == 1 and self.N > 1:
                v = v * self.N
            if len(v) != self.N:
                raise ValueError(f"{name} needs one entry per node")
            if name == "ber":
                if any(not 0 <= x < 1 for x in v):
                    raise ValueError("ber must lie in [0, 1)")
            elif any(not (x > 0 and math.isfinite(x)) for x in v):
                raise ValueError(f"{name} must be positive and finite")
            object.__setattr__(self, name, v)


class NodeState(NamedTuple):
    h: int
    q: int
    b: int


@dataclass(slots=True)
class SlotOutcome:
    served: int = 0
    sensed: int = 0
    dropped_sensing: int = 0
    dropped_overflow: int = 0
    harvested: int = 0
    consumed_tx: int = 0
    consumed_sense: int = 0

    @property
    def arrivals(self) -> int:
        return self.sensed + self.dropped_sensing


def continuous_rate(gain: float, p: float, cfg: EnvConfig, n: int = 0) -> float:
    """Unfloored packets per slot for energy ``p`` at raw channel gain ``gain``."""
    if p <= 0:
        return 0.0
    snr = cfg.xi[n] * gain * cfg.gain_scale * p / (cfg.N0 * cfg.W * cfg.tau)
    return cfg.tau * cfg.W / cfg.K * math.log2(1.0 + snr)


def transmit_rate(h: int, p: float, cfg: EnvConfig, channel: ChannelModel, n: int = 0) -> int:
    """Whole packets deliverable in one slot from channel state ``h`` with energy ``p``."""
    if p < 0:
        raise ValueError("transmit energy must be nonnegative")
    return int(math.floor(continuous_rate(channel.gains[h], p, cfg, n) + _EPS))


def sensing_capacity(energy: int, gamma: float) -> int:
    return int(math.floor(gamma * energy + _EPS))


def sensing_energy(sensed: int, gamma: float) -> int:
    return int(math.ceil(sensed / gamma - _EPS)) if sensed > 0 else 0


def sample_channel_next(h: int, channel: ChannelModel, rng: np.random.Generator) -> int:
    return channel.next_from_uniform(h, rng.random())


def step_node(
    s: NodeState, p_tx: int, a: int, e: int, cfg: EnvConfig, rate: int
) -> tuple[NodeState, SlotOutcome]:
    """Queue and battery update of one node for one slot.

    ``rate`` is the deliverable packet count for ``(s.h, p_tx)``. The returned
    state keeps ``s.h``; the caller draws the next channel state.
    """
    if not 0 <= p_tx <= s.b:
        raise ValueError(f"transmit energy {p_tx} outside [0, {s.b}]")
    served = min(s.q, rate)
    left = s.b - p_tx
    sensed = min(a, sensing_capacity(left, cfg.gamma))
    sense_cost = sensing_energy(sensed, cfg.gamma)
    backlog = s.q - served + sensed
    q_next = min(cfg.Q_max, backlog)
    b_next = min(cfg.B_max, max(0, left - sense_cost) + e)
    out = SlotOutcome(
        served=served,
        sensed=sensed,
        dropped_sensing=a - sensed,
        dropped_overflow=backlog - q_next,
        harvested=e,
        consumed_tx=p_tx,
        consumed_sense=sense_cost,
    )
    return NodeState(s.h, q_next, b_next), out


def check_action(p: Sequence[int], states: Sequence[NodeState]) -> None:
    if len(p) != len(states):
        raise ValueError("action length differs from node count")
    if sum(1 for x in p if x > 0) > 1:
        raise ValueError("at most one node may be scheduled per slot")
    for pn, s in zip(p, states):
        if pn < 0 or pn > s.b:
            raise ValueError(f"transmit energy {pn} outside [0, {s.b}]")


@dataclass
class SystemModel:
    """Configuration plus stochastic models, with cached per-node rate tables."""

    cfg: EnvConfig
    channel: ChannelModel
    arrivals: ArrivalModel | Sequence[ArrivalModel]
    rates: np.ndarray = field(init=False, repr=False)
    cont_rates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.arrivals, ArrivalModel):
            self.arrivals = (self.arrivals,) * self.cfg.N
        self.arrivals = tuple(self.arrivals)
        if len(self.arrivals) != self.cfg.N:
            raise ValueError("need one ArrivalModel per node")
        n, nh, nb = self.cfg.N, self.channel.n_states, self.cfg.B_max + 1
        self.cont_rates = np.zeros((n, nh, nb))
        self.rates = np.zeros((n, nh, nb), dtype=int)
        for i in range(n):
            for h in range(nh):
                for p in range(nb):
                    self.cont_rates[i, h, p] = continuous_rate(self.channel.gains[h], p, self.cfg, i)
                    self.rates[i, h, p] = transmit_rate(h, p, self.cfg, self.channel, i)
        self._rate_lists = self.rates.tolist()

    @property
    def N(self) -> int:
        return self.cfg.N

    def lambda_a(self, n: int = 0) -> float:
        return self.arrivals[n].lambda_a

    def rate(self, n: int, h: int, p: int) -> int:
        return self._rate_lists[n][h][p]


def step_system(
    states: Sequence[NodeState], p: Sequence[int], rng: np.random.Generator, model: SystemModel
) -> tuple[list[NodeState], list[SlotOutcome]]:
    """Advance every node one slot under transmit-energy vector ``p``.

    Arrivals, harvests and channel moves are drawn independently per node from
    three uniforms per node, in node order.
    """
    check_action(p, states)
    u = rng.random((len(states), 3)).tolist()
    new_states, outcomes = [], []
    for n, (s, pn) in enumerate(zip(states, p)):
        arr = model.arrivals[n]
        a = arr.packets_from_uniform(u[n][0])
        e = arr.energy_from_uniform(u[n][1])
        ns, out = step_node(s, pn, a, e, model.cfg, model.rate(n, s.h, pn))
        h_next = model.channel.next_from_uniform(s.h, u[n][2])
        new_states.append(NodeState(h_next, ns.q, ns.b))
        outcomes.append(out)
    return new_states, outcomes


class Environment:
    """Stateful wrapper that owns the node states and the random stream."""

    def __init__(self, model: SystemModel, rng: np.random.Generator,
                 initial: Sequence[NodeState] | None = None):
        self.model = model
        self.rng = rng
        if initial is None:
            initial = [NodeState(0, 0, 0)] * model.N
        self.states = list(initial)
        self.t = 0

    def step(self, p: Sequence[int]) -> list[SlotOutcome]:
        self.states, outcomes = step_system(self.states, p, self.rng, self.model)
        self.t += 1
        return outcomes
