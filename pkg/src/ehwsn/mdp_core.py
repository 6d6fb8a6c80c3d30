"""Exact finite-MDP machinery for small instances.

State indexing is mixed radix with node 0 most significant.  Per node, a full
state ``(h, q, b)`` has local index ``(h*(Q_max+1) + q)*(B_max+1) + b`` and a
reduced (queue, battery) state has local index ``q*(B_max+1) + b``.

Actions are transmit-energy vectors with at most one nonzero entry.  They are
numbered ``0`` for "nobody transmits", then ``1 + (p-1)*N + n`` for node ``n``
spending ``p`` units, so lower indices mean lower energy, then lower node id.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .sim_env import (
    NodeState,
    SystemModel,
    sensing_capacity,
    sensing_energy,
)

__all__ = [
    "StateSpaceTooLarge",
    "ReducedState",
    "PostDecisionState",
    "StateSpace",
    "TransitionKernel",
    "MdpModel",
    "enumerate_states",
    "action_list",
    "build_kernel",
    "lagrangian_reward",
    "node_reward",
    "post_decision_map",
    "pre_decision_map",
    "post_decision_node",
    "pre_decision_node",
    "check_multipliers",
]

DEFAULT_STATE_CAP = 10**6


class StateSpaceTooLarge(ValueError):
    pass


class ReducedState(NamedTuple):
    q: tuple[int, ...]
    b: tuple[int, ...]


class PostDecisionState(NamedTuple):
    q: tuple[int, ...]
    b: tuple[int, ...]


def check_multipliers(eta, N: int) -> np.ndarray:
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (N,)).copy()
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("Lagrange multipliers must be finite and nonnegative")
    return eta


# -- per-node maps -----------------------------------------------------------

def post_decision_node(q: int, b: int, rate: int, p: int) -> tuple[int, int]:
    return max(0, q - rate), b - p


def pre_decision_node(qt: int, bt: int, a: int, e: int, cfg) -> tuple[int, int]:
    """Post-decision (queue, battery) plus one slot of arrivals and harvest."""
    sensed = min(a, sensing_capacity(bt, cfg.gamma))
    q = min(cfg.Q_max, qt + sensed)
    b = min(cfg.B_max, max(0, bt - sensing_energy(sensed, cfg.gamma)) + e)
    return q, b


def post_decision_map(S: Sequence[NodeState], p: Sequence[int], model: SystemModel) -> PostDecisionState:
    qs, bs = [], []
    for n, (s, pn) in enumerate(zip(S, p)):
        qt, bt = post_decision_node(s.q, s.b, model.rate(n, s.h, pn), pn)
        qs.append(qt)
        bs.append(bt)
    return PostDecisionState(tuple(qs), tuple(bs))


def pre_decision_map(st: PostDecisionState, a: Sequence[int], e: Sequence[int], cfg) -> ReducedState:
    qs, bs = [], []
    for qt, bt, an, en in zip(st.q, st.b, a, e):
        q, b = pre_decision_node(qt, bt, an, en, cfg)
        qs.append(q)
        bs.append(b)
    return ReducedState(tuple(qs), tuple(bs))


def node_reward(q: int, served: int, n: int, eta_n: float, model: SystemModel) -> float:
    """Per-node Lagrangian slot cost."""
    cfg = model.cfg
    w = cfg.omega[n]
    return w + eta_n * q - (w / model.lambda_a(n) + eta_n * cfg.D_max) * served


def lagrangian_reward(S: Sequence[NodeState], p: Sequence[int], eta, model: SystemModel) -> float:
    eta = check_multipliers(eta, model.N)
    total = 0.0
    for n, (s, pn) in enumerate(zip(S, p)):
        served = min(s.q, model.rate(n, s.h, pn))
        total += node_reward(s.q, served, n, eta[n], model)
    return total


# -- enumeration ---------------------------------------------------------------

@dataclass
class StateSpace:
    """Enumerated full states with index helpers."""

    N: int
    n_h: int
    Q_max: int
    B_max: int
    states: list = field(repr=False)

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}
        nq, nb = self.Q_max + 1, self.B_max + 1
        self.n_red_local = nq * nb
        self.n_reduced = self.n_red_local ** self.N
        self.n_joint_h = self.n_h ** self.N
        h_of, r_of = [], []
        for s in self.states:
            hi = ri = 0
            for ns in s:
                hi = hi * self.n_h + ns.h
                ri = ri * self.n_red_local + ns.q * nb + ns.b
            h_of.append(hi)
            r_of.append(ri)
        self.h_of = np.array(h_of)
        self.r_of = np.array(r_of)
        # full index from (joint h, reduced index)
        self.full_of = np.empty((self.n_joint_h, self.n_reduced), dtype=int)
        self.full_of[self.h_of, self.r_of] = np.arange(len(self.states))

    def __len__(self):
        return len(self.states)

    def reduced_states(self) -> list[ReducedState]:
        nb = self.B_max + 1
        out = []
        for combo in itertools.product(range(self.n_red_local), repeat=self.N):
            out.append(ReducedState(tuple(c // nb for c in combo), tuple(c % nb for c in combo)))
        return out

    def joint_channels(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.n_h), repeat=self.N))


def enumerate_states(model_or_cfg, n_h: int | None = None, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    """All full system states in deterministic order.

    Accepts a ``SystemModel`` or an ``EnvConfig`` plus ``n_h`` channel states.
    """
    if isinstance(model_or_cfg, SystemModel):
        cfg, n_h = model_or_cfg.cfg, model_or_cfg.channel.n_states
    else:
        cfg = model_or_cfg
    per_node = n_h * (cfg.Q_max + 1) * (cfg.B_max + 1)
    size = per_node ** cfg.N
    if size > cap:
        raise StateSpaceTooLarge(f"{size} states exceeds the cap of {cap}")
    local = [NodeState(h, q, b) for h in range(n_h)
             for q in range(cfg.Q_max + 1) for b in range(cfg.B_max + 1)]
    states = list(itertools.product(local, repeat=cfg.N))
    return StateSpace(cfg.N, n_h, cfg.Q_max, cfg.B_max, states)


def action_list(N: int, B_max: int) -> list[tuple[int, ...]]:
    acts = [(0,) * N]
    for p in range(1, B_max + 1):
        for n in range(N):
            v = [0] * N
            v[n] = p
            acts.append(tuple(v))
    return acts


# -- kernel --------------------------------------------------------------------

@dataclass
class TransitionKernel:
    """One sparse row-stochastic matrix per action; inadmissible rows are empty."""

    matrices: list
    admissible: np.ndarray
    actions: list

    @property
    def n_states(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.matrices)

    def row(self, s: int, a: int) -> list[tuple[int, float]]:
        m = self.matrices[a]
        lo, hi = m.indptr[s], m.indptr[s + 1]
        return list(zip(m.indices[lo:hi].tolist(), m.data[lo:hi].tolist()))

    def row_sums(self) -> np.ndarray:
        """``(S, A)`` array of row sums; NaN where the action is inadmissible."""
        out = np.full(self.admissible.shape, np.nan)
        for a, m in enumerate(self.matrices):
            sums = np.asarray(m.sum(axis=1)).ravel()
            mask = self.admissible[:, a]
            out[mask, a] = sums[mask]
        return out

    def export(self, path) -> None:
        with open(path, "w") as fh:
            for s in range(self.n_states):
                for a in range(self.n_actions):
                    if not self.admissible[s, a]:
                        continue
                    for j, pr in self.row(s, a):
                        fh.write(f"{s} {a} {j} {pr!r}\n")

    def policy_matrix(self, policy: np.ndarray) -> sp.csr_matrix:
        rows = []
        for a, m in enumerate(self.matrices):
            sel = sp.diags((policy == a).astype(float))
            rows.append(sel @ m)
        return sp.csr_matrix(sum(rows[1:], rows[0]))


def _check_model(model: SystemModel) -> None:
    rows = model.channel.transition.sum(axis=1)
    if np.any(np.abs(rows - 1) > 1e-12):
        raise ValueError("channel transition rows are not normalized")
    for arr in model.arrivals:
        for pmf in (arr.packet_dist, arr.energy_dist):
            if np.any(pmf < 0) or abs(pmf.sum() - 1) > 1e-12:
                raise ValueError("arrival distribution is not normalized")


def _pre_dist(qt: int, bt: int, n: int, model: SystemModel) -> dict:
    """Distribution of the next pre-decision (q, b) of node ``n`` from post-decision (qt, bt)."""
    cfg = model.cfg
    arr = model.arrivals[n]
    out: dict = {}
    for a, pa in enumerate(arr.packet_dist):
        if pa == 0:
            continue
        for e, pe in enumerate(arr.energy_dist):
            if pe == 0:
                continue
            key = pre_decision_node(qt, bt, a, e, cfg)
            out[key] = out.get(key, 0.0) + pa * pe
    return out


class MdpModel:
    """Enumerated instance with kernels for the full, reduced and post-decision forms.

    Reward arrays are affine in the multipliers; ``rewards(eta)`` assembles them.
    """

    def __init__(self, model: SystemModel, cap: int = DEFAULT_STATE_CAP):
        _check_model(model)
        self.model = model
        cfg = model.cfg
        self.space = enumerate_states(model, cap=cap)
        self.actions = action_list(cfg.N, cfg.B_max)
        self.pi_h = model.channel.stationary()
        nb = cfg.B_max + 1
        self._nb = nb
        self._pre = [
            {(qt, bt): _pre_dist(qt, bt, n, model)
             for qt in range(cfg.Q_max + 1) for bt in range(nb)}
            for n in range(cfg.N)
        ]
        self._build_full()
        self._build_reduced()

    # shared helpers
    def _served(self, S, p):
        m = self.model
        return [min(s.q, m.rate(n, s.h, pn)) for n, (s, pn) in enumerate(zip(S, p))]

    def _admissible(self, S, p) -> bool:
        return all(pn <= s.b for s, pn in zip(S, p))

    def _build_full(self):
        m, cfg, space = self.model, self.model.cfg, self.space
        S, A, N = len(space), len(self.actions), cfg.N
        nh, nloc = m.channel.n_states, m.channel.n_states * (cfg.Q_max + 1) * self._nb
        trans = m.channel.transition
        admissible = np.zeros((S, A), dtype=bool)
        served = np.zeros((N, S, A))
        rows = [[] for _ in range(A)]
        cols = [[] for _ in range(A)]
        vals = [[] for _ in range(A)]
        for si, st in enumerate(space.states):
            for ai, p in enumerate(self.actions):
                if not self._admissible(st, p):
                    continue
                admissible[si, ai] = True
                sv = self._served(st, p)
                served[:, si, ai] = sv
                per_node = []
                for n, (s, pn) in enumerate(zip(st, p)):
                    qt, bt = s.q - sv[n], s.b - pn
                    local = []
                    for (q2, b2), pqb in self._pre[n][(qt, bt)].items():
                        for h2 in range(nh):
                            ph = trans[s.h, h2]
                            if ph > 0:
                                local.append(((h2 * (cfg.Q_max + 1) + q2) * self._nb + b2, ph * pqb))
                    per_node.append(local)
                for combo in itertools.product(*per_node):
                    j, pr = 0, 1.0
                    for li, lp in combo:
                        j = j * nloc + li
                        pr *= lp
                    rows[ai].append(si)
                    cols[ai].append(j)
                    vals[ai].append(pr)
        self.kernel = TransitionKernel(
            [sp.csr_matrix((vals[a], (rows[a], cols[a])), shape=(S, S)) for a in range(A)],
            admissible, self.actions)
        self.full_served = served
        self.full_queue = np.array([[s[n].q for s in space.states] for n in range(N)], dtype=float)

    def _build_reduced(self):
        """Per joint channel realization: reduced-state kernels and post-decision indices."""
        m, cfg, space = self.model, self.model.cfg, self.space
        N, A, R, nb = cfg.N, len(self.actions), space.n_reduced, self._nb
        red = space.reduced_states()
        H = space.joint_channels()
        self.red_admissible = np.zeros((R, A), dtype=bool)
        self.red_served = np.zeros((len(H), N, R, A))
        self.red_queue = np.array([[r.q[n] for r in red] for n in range(N)], dtype=float)
        self.post_index = np.zeros((len(H), R, A), dtype=int)
        for ri, r in enumerate(red):
            for ai, p in enumerate(self.actions):
                self.red_admissible[ri, ai] = all(pn <= bn for pn, bn in zip(p, r.b))
        for hi, hv in enumerate(H):
            for ri, r in enumerate(red):
                st = [NodeState(h, q, b) for h, q, b in zip(hv, r.q, r.b)]
                for ai, p in enumerate(self.actions):
                    if not self.red_admissible[ri, ai]:
                        continue
                    sv = self._served(st, p)
                    self.red_served[hi, :, ri, ai] = sv
                    j = 0
                    for n in range(N):
                        j = j * space.n_red_local + (r.q[n] - sv[n]) * nb + (r.b[n] - p[n])
                    self.post_index[hi, ri, ai] = j
        # post-decision -> pre-decision distribution, product over nodes
        rows, cols, vals = [], [], []
        for ri, r in enumerate(red):
            per_node = [[((q2 * nb + b2), pr) for (q2, b2), pr in self._pre[n][(r.q[n], r.b[n])].items()]
                        for n in range(N)]
            for combo in itertools.product(*per_node):
                j, pr = 0, 1.0
                for li, lp in combo:
                    j = j * space.n_red_local + li
                    pr *= lp
                rows.append(ri)
                cols.append(j)
                vals.append(pr)
        self.pre_matrix = sp.csr_matrix((vals, (rows, cols)), shape=(R, R))
        self.channel_probs = np.array([np.prod([self.pi_h[h] for h in hv]) for hv in H])
        # reduced-state kernels per (joint channel, action) = post index pushed through pre_matrix
        self.red_kernels = []
        for hi in range(len(H)):
            mats = []
            for ai in range(A):
                mask = self.red_admissible[:, ai]
                sel = sp.csr_matrix((np.ones(mask.sum()), (np.flatnonzero(mask), self.post_index[hi, mask, ai])),
                                    shape=(R, R))
                mats.append(sp.csr_matrix(sel @ self.pre_matrix))
            self.red_kernels.append(mats)

    # rewards
    def _coeffs(self, eta):
        cfg, m = self.model.cfg, self.model
        eta = check_multipliers(eta, cfg.N)
        w = np.array(cfg.omega)
        lam = np.array([m.lambda_a(n) for n in range(cfg.N)])
        return eta, w, w / lam + eta * cfg.D_max

    def full_rewards(self, eta) -> np.ndarray:
        eta, w, c = self._coeffs(eta)
        R = np.full(self.kernel.admissible.shape, w.sum())
        for n in range(self.model.N):
            R += eta[n] * self.full_queue[n][:, None] - c[n] * self.full_served[n]
        R[~self.kernel.admissible] = np.inf
        return R

    def reduced_rewards(self, eta) -> np.ndarray:
        """``(joint channel, reduced state, action)`` rewards."""
        eta, w, c = self._coeffs(eta)
        R = np.full(self.red_served.shape[:1] + self.red_admissible.shape, w.sum())
        for n in range(self.model.N):
            R += eta[n] * self.red_queue[n][None, :, None] - c[n] * self.red_served[:, n]
        R[:, ~self.red_admissible] = np.inf
        return R


def build_kernel(model: SystemModel, cap: int = DEFAULT_STATE_CAP) -> tuple[StateSpace, TransitionKernel]:
    mdp = MdpModel(model, cap=cap)
    return mdp.space, mdp.kernel
