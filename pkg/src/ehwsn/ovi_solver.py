"""Offline average-cost solvers: relative value iteration and a dual loop.

Three Bellman forms are solved on the same enumerated instance: the full state
``(H, Q, B)``, the reduced state ``(Q, B)`` (channel averaged out), and the
post-decision reduced state.  The reduced forms are exact when the channel is
memoryless; for a Markov channel only the full form is exact.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp_core import MdpModel, check_multipliers

__all__ = [
    "NonConvergenceError",
    "InfeasibleError",
    "RviResult",
    "PolicyEvaluation",
    "DualResult",
    "relative_value_iteration",
    "full_rvi",
    "reduced_rvi",
    "postdecision_rvi",
    "evaluate_policy",
    "dual_solve",
    "dual_function",
    "write_values_csv",
    "write_policy_csv",
]

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


class NonConvergenceError(RuntimeError):
    def __init__(self, span: float, sweeps: int):
        super().__init__(f"value iteration did not converge after {sweeps} sweeps (span {span:.3e})")
        self.span = span
        self.sweeps = sweeps


class InfeasibleError(RuntimeError):
    def __init__(self, probes: list):
        worst = max(float(np.max(p["constraint"])) for p in probes)
        super().__init__(f"delay constraint violated at every probed multiplier "
                         f"({len(probes)} probes, smallest worst-node slack {-worst:.4g})")
        self.probes = probes


@dataclass
class RviResult:
    theta: float
    values: np.ndarray
    policy: np.ndarray
    sweeps: int
    spans: list = field(repr=False, default_factory=list)


def greedy(qvals: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Row-wise argmin with near-ties resolved to the lowest action index."""
    best = qvals.min(axis=-1, keepdims=True)
    near = qvals <= best + tol * np.maximum(1.0, np.abs(best))
    return np.argmax(near, axis=-1)


def _iterate(backup, n: int, ref: int, v0, tol: float, max_sweeps: int, aperiodicity: float):
    """Generic relative value iteration on ``backup(V) -> (TV, Qvals)``.

    With ``aperiodicity`` = a < 1 the iteration runs on the transformed chain
    ``a*P + (1-a)*I`` with costs scaled by ``a``; gain and relative values of
    the original problem are recovered unchanged.
    """
    V = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    V -= V[ref]
    spans = []
    for k in range(1, max_sweeps + 1):
        TV = backup(V)
        TV = aperiodicity * TV + (1.0 - aperiodicity) * V
        diff = TV - V
        span = float(diff.max() - diff.min())
        spans.append(span)
        V = TV - TV[ref]
        if span < tol:
            theta = float(diff[ref]) / aperiodicity
            return V, theta, k, spans
    raise NonConvergenceError(spans[-1], max_sweeps)


def relative_value_iteration(kernel_mats, rewards: np.ndarray, tol: float = 1e-9, max_sweeps: int = 10**5,
                             ref: int = 0, v0=None, aperiodicity: float = 0.5) -> RviResult:
    """Average-cost RVI for a generic finite MDP.

    Parameters
    ----------
    kernel_mats : sequence of (S, S) sparse matrices, one per action
    rewards : (S, A) array, ``inf`` marks an inadmissible action
    """
    mats = list(getattr(kernel_mats, "matrices", kernel_mats))
    rewards = np.asarray(rewards, dtype=float)
    S, A = rewards.shape

    def qvals(V):
        Q = np.empty((S, A))
        for a, m in enumerate(mats):
            Q[:, a] = rewards[:, a] + m @ V
        return Q

    V, theta, k, spans = _iterate(lambda V: qvals(V).min(axis=1), S, ref, v0, tol, max_sweeps, aperiodicity)
    return RviResult(theta, V, greedy(qvals(V)), k, spans)


def full_rvi(mdp: MdpModel, eta, **kw) -> RviResult:
    """Full-state Bellman equation; policy indexed by full state."""
    return relative_value_iteration(mdp.kernel, mdp.full_rewards(eta), **kw)


def reduced_rvi(mdp: MdpModel, eta, tol: float = 1e-9, max_sweeps: int = 10**5, v0=None,
                aperiodicity: float = 0.5) -> RviResult:
    """Reduced-state Bellman equation.

    Values are over ``(Q, B)``; the minimization decouples over channel
    realizations, so the returned policy has shape ``(joint channels, reduced states)``.
    """
    R = mdp.reduced_rewards(eta)
    probs = mdp.channel_probs
    nH, nR, A = R.shape

    def qvals(V):
        Q = np.empty((nH, nR, A))
        for h in range(nH):
            for a, m in enumerate(mdp.red_kernels[h]):
                Q[h, :, a] = R[h, :, a] + m @ V
        return Q

    def backup(V):
        return probs @ qvals(V).min(axis=2)

    V, theta, k, spans = _iterate(backup, nR, 0, v0, tol, max_sweeps, aperiodicity)
    return RviResult(theta, V, greedy(qvals(V)), k, spans)


def postdecision_qvals(mdp: MdpModel, R: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``R + V[post-decision index]`` for every (joint channel, pre-decision state, action)."""
    return R + V[mdp.post_index]


def postdecision_rvi(mdp: MdpModel, eta, tol: float = 1e-9, max_sweeps: int = 10**5, v0=None,
                     aperiodicity: float = 0.5) -> RviResult:
    """Post-decision Bellman equation; values over post-decision ``(Q~, B~)``.

    The returned policy minimizes per-slot cost plus the post-decision value,
    which needs no arrival statistics once the pre-decision state is observed.
    """
    R = mdp.reduced_rewards(eta)
    probs = mdp.channel_probs
    pre = mdp.pre_matrix

    def backup(V):
        return pre @ (probs @ postdecision_qvals(mdp, R, V).min(axis=2))

    V, theta, k, spans = _iterate(backup, R.shape[1], 0, v0, tol, max_sweeps, aperiodicity)
    return RviResult(theta, V, greedy(postdecision_qvals(mdp, R, V)), k, spans)


# -- exact policy evaluation ---------------------------------------------------

@dataclass
class PolicyEvaluation:
    stationary: np.ndarray = field(repr=False)
    theta: float
    avg_queue: np.ndarray
    throughput: np.ndarray
    drop_rate: np.ndarray
    delay: np.ndarray
    constraint: np.ndarray
    objective: float


def stationary_distribution(P: sp.spmatrix) -> np.ndarray:
    n = P.shape[0]
    A = sp.lil_matrix((P.T - sp.identity(n)).tocsr())
    A[0, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def evaluate_policy(mdp: MdpModel, policy: np.ndarray, eta=0.0) -> PolicyEvaluation:
    """Stationary performance of a full-state deterministic policy."""
    m = mdp.model
    N = m.N
    eta = check_multipliers(eta, N)
    policy = np.asarray(policy)
    if not np.all(mdp.kernel.admissible[np.arange(len(policy)), policy]):
        raise ValueError("policy uses an inadmissible action")
    pi = stationary_distribution(mdp.kernel.policy_matrix(policy))
    idx = np.arange(len(policy))
    qbar = np.array([pi @ mdp.full_queue[n] for n in range(N)])
    rbar = np.array([pi @ mdp.full_served[n][idx, policy] for n in range(N)])
    lam = np.array([m.lambda_a(n) for n in range(N)])
    drop = 1.0 - rbar / lam
    with np.errstate(divide="ignore", invalid="ignore"):
        delay = np.where(qbar == 0, 0.0, qbar / rbar)
    constraint = qbar - m.cfg.D_max * rbar
    theta = float(pi @ mdp.full_rewards(eta)[idx, policy])
    objective = float(np.dot(m.cfg.omega, drop))
    return PolicyEvaluation(pi, theta, qbar, rbar, drop, delay, constraint, objective)


# -- dual loop -------------------------------------------------------------------

@dataclass
class DualResult:
    eta: np.ndarray
    policy: np.ndarray
    theta: float
    evaluation: PolicyEvaluation
    probes: list = field(repr=False, default_factory=list)


def default_dual_steps(k: int) -> float:
    return 1.0 / np.sqrt(k + 1.0)


def dual_function(mdp: MdpModel, eta, **kw) -> float:
    return full_rvi(mdp, eta, **kw).theta


def dual_solve(mdp: MdpModel, eta0=0.0, dual_step_schedule=default_dual_steps, outer_iters: int = 60,
               feas_tol: float = 1e-9, refine_iters: int = 30, **rvi_kw) -> DualResult:
    """Projected subgradient ascent on the multipliers, then a boundary line search.

    The subgradient at each iterate is the exact stationary constraint slack
    ``E[Q_n] - D_max*E[served_n]`` of the inner greedy policy.  Subgradient
    iterates tend to jump across the constraint boundary, so afterwards the
    segment between the best infeasible and the best feasible multiplier is
    bisected ``refine_iters`` times.  The feasible probe with the lowest
    weighted drop rate is returned.
    """
    eta = check_multipliers(eta0, mdp.model.N)
    probes, v0 = [], None
    state = {"best": None, "best_infeasible": None}

    def probe(eta):
        nonlocal v0
        res = full_rvi(mdp, eta, v0=v0, **rvi_kw)
        v0 = res.values
        ev = evaluate_policy(mdp, res.policy, eta)
        probes.append({"eta": eta.copy(), "theta": res.theta, "constraint": ev.constraint,
                       "objective": ev.objective})
        feasible = bool(np.all(ev.constraint <= feas_tol))
        if feasible:
            best = state["best"]
            if best is None or ev.objective < best.evaluation.objective - 1e-12:
                state["best"] = DualResult(eta.copy(), res.policy, res.theta, ev)
        else:
            inf = state["best_infeasible"]
            if inf is None or ev.objective < inf[1] - 1e-12:
                state["best_infeasible"] = (eta.copy(), ev.objective)
        return ev, feasible

    for k in range(outer_iters):
        ev, _ = probe(eta)
        log.debug("dual iter %d eta=%s slack=%s", k, eta, ev.constraint)
        eta = np.maximum(0.0, eta + dual_step_schedule(k) * ev.constraint)
    if state["best"] is None:
        raise InfeasibleError(probes)
    if state["best_infeasible"] is not None:
        lo, hi = state["best_infeasible"][0], state["best"].eta.copy()
        for _ in range(refine_iters):
            mid = 0.5 * (lo + hi)
            _, feasible = probe(mid)
            if feasible:
                hi = mid
            else:
                lo = mid
    best = state["best"]
    best.probes = probes
    return best


def write_values_csv(path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state_idx", "value"])
        for i, v in enumerate(np.ravel(values)):
            w.writerow([i, repr(float(v))])


def write_policy_csv(path, policy) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state_idx", "action"])
        for i, a in enumerate(np.ravel(policy)):
            w.writerow([i, int(a)])
