"""Per-node transmit-energy choice (water-filling) and auction bids.

The node maximizes the linearized one-slot gain

    G(p) = c * min(Q, r(p)) + p * dB,    c = omega/lambda + eta*D_max + dQ,

with ``r`` the unfloored Shannon-type rate and ``(dQ, dB)`` the table slopes.
For ``dB < 0`` this is concave in ``p``; its continuous maximizer is the
water-filling level capped by the battery and by the energy that empties the
queue, and the best integer energy is the floor or the ceiling of it.
"""

from __future__ import annotations

import logging
import math

from ..sim_env import NodeState, SystemModel
from .learning import PerNodeValueTable, value_derivatives

__all__ = [
    "NodeRadio",
    "queue_cap",
    "water_level",
    "linearized_gain",
    "optimal_power",
    "compute_bid",
]

log = logging.getLogger(__name__)

_LN2 = math.log(2.0)


class NodeRadio:
    """Rate constants of one node, precomputed per channel state."""

    __slots__ = ("n", "kappa", "alpha", "cont", "qcap", "cost0", "D_max", "omega_over_lambda", "B_max", "Q_max")

    def __init__(self, model: SystemModel, n: int):
        cfg = model.cfg
        self.n = n
        self.kappa = cfg.tau * cfg.W / cfg.K
        self.alpha = [cfg.xi[n] * g * cfg.gain_scale / (cfg.N0 * cfg.W * cfg.tau) for g in model.channel.gains]
        self.cont = model.cont_rates[n].tolist()
        self.qcap = [[queue_cap(q, a, self.kappa) for q in range(cfg.Q_max + 1)] for a in self.alpha]
        self.omega_over_lambda = cfg.omega[n] / model.lambda_a(n)
        self.D_max = cfg.D_max
        self.B_max = cfg.B_max
        self.Q_max = cfg.Q_max

    def rate(self, h: int, p: float) -> float:
        if p <= 0:
            return 0.0
        return self.kappa * math.log2(1.0 + self.alpha[h] * p)


def queue_cap(q: int, alpha: float, kappa: float) -> float:
    """Energy at which the unfloored rate equals ``q`` packets."""
    return (2.0 ** (q / kappa) - 1.0) / alpha


def water_level(c: float, dB: float, alpha: float, kappa: float) -> float:
    """Unconstrained maximizer of ``c*kappa*log2(1+alpha*p) + p*dB`` for ``dB < 0``, floored at 0."""
    return max(0.0, c * kappa / (-dB * _LN2) - 1.0 / alpha)


def linearized_gain(radio: NodeRadio, h: int, q: int, p: int, c: float, dB: float) -> float:
    r = radio.cont[h][p]
    return c * (q if r > q else r) + p * dB


def _better(g_new: float, g_old: float) -> bool:
    return g_new > g_old + 1e-12 * max(1.0, abs(g_old))


def optimal_power(s: NodeState, table: PerNodeValueTable, eta: float, radio: NodeRadio,
                  derivs: tuple[float, float] | None = None) -> int:
    """Integer transmit energy for node state ``s`` if it wins the slot."""
    h, q, b = s
    if q == 0 or b == 0:
        return 0
    dQ, dB = derivs if derivs is not None else value_derivatives(table, q, b)
    c = radio.omega_over_lambda + eta * radio.D_max + dQ
    cap = radio.qcap[h][q]
    if dB < 0:
        pc = min(float(b), cap, water_level(c, dB, radio.alpha[h], radio.kappa))
        lo = int(math.floor(pc))
        if lo >= b:
            return b
        if _better(linearized_gain(radio, h, q, lo + 1, c, dB), linearized_gain(radio, h, q, lo, c, dB)):
            return lo + 1
        return lo
    # nonnegative battery slope: closed form undefined, search the grid
    log.debug("grid fallback at (h=%d, q=%d, b=%d), dB=%.3g", h, q, b, dB)
    top = min(b, int(math.ceil(cap)))
    best_p, best_g = 0, 0.0
    for p in range(1, top + 1):
        g = linearized_gain(radio, h, q, p, c, dB)
        if _better(g, best_g):
            best_p, best_g = p, g
    return best_p


def compute_bid(s: NodeState, table: PerNodeValueTable, eta: float, p_star: int, radio: NodeRadio,
                derivs: tuple[float, float] | None = None) -> float:
    """Linearized gain of transmitting ``p_star`` over staying silent."""
    h, q, b = s
    if not 0 <= p_star <= b:
        raise ValueError("bid energy outside [0, battery]")
    if p_star == 0:
        return 0.0
    dQ, dB = derivs if derivs is not None else value_derivatives(table, q, b)
    c = radio.omega_over_lambda + eta * radio.D_max + dQ
    return linearized_gain(radio, h, q, p_star, c, dB)
