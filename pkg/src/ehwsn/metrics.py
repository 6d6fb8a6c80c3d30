"""Long-run reliability and delay estimators over simulated trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .sim_env import NodeState, SlotOutcome

__all__ = [
    "CSV_HEADER",
    "MetricAccumulator",
    "throughput",
    "drop_rate",
    "direct_drop_rate",
    "loss_rate",
    "average_delay",
    "metric_rows",
    "write_metric_csv",
]

CSV_HEADER = (
    "run_id", "n", "slots", "throughput", "drop_rate", "loss_rate",
    "avg_delay", "avg_queue", "avg_battery", "lm_eta",
)


_SUMS = ("arrivals", "served", "queue", "battery", "dropped_sensing", "dropped_overflow")


@dataclass
class MetricAccumulator:
    """Running per-node sums.

    Slots with index below ``warmup`` are counted in ``seen`` but otherwise
    ignored, so steady-state averages exclude the transient.
    """

    N: int
    warmup: int = 0
    slots: int = 0
    seen: int = 0
    arrivals: list = field(default=None)
    served: list = field(default=None)
    queue: list = field(default=None)
    battery: list = field(default=None)
    dropped_sensing: list = field(default=None)
    dropped_overflow: list = field(default=None)

    def __post_init__(self):
        for name in _SUMS:
            if getattr(self, name) is None:
                setattr(self, name, [0] * self.N)

    def record(self, before: Sequence[NodeState], outcomes: Sequence[SlotOutcome]) -> None:
        """Add one slot: ``before`` are the node states at slot start."""
        self.seen += 1
        if self.seen <= self.warmup:
            return
        self.slots += 1
        for n, (s, o) in enumerate(zip(before, outcomes)):
            self.arrivals[n] += o.sensed + o.dropped_sensing
            self.served[n] += o.served
            self.queue[n] += s.q
            self.battery[n] += s.b
            self.dropped_sensing[n] += o.dropped_sensing
            self.dropped_overflow[n] += o.dropped_overflow

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        if other.N != self.N:
            raise ValueError("cannot merge accumulators with different node counts")
        out = MetricAccumulator(self.N, warmup=self.warmup + other.warmup,
                                slots=self.slots + other.slots, seen=self.seen + other.seen)
        for name in _SUMS:
            setattr(out, name, [x + y for x, y in zip(getattr(self, name), getattr(other, name))])
        return out

    def avg_queue(self, n: int) -> float:
        self._need_slots()
        return self.queue[n] / self.slots

    def avg_battery(self, n: int) -> float:
        self._need_slots()
        return self.battery[n] / self.slots

    def _need_slots(self):
        if self.slots < 1:
            raise ValueError("no slots recorded after warm-up")


def throughput(acc: MetricAccumulator, n: int) -> float:
    """Mean packets delivered per slot by node ``n``."""
    acc._need_slots()
    return acc.served[n] / acc.slots


def drop_rate(acc: MetricAccumulator, n: int, lambda_a: float) -> float:
    """``1 - throughput / lambda_a``, clamped to [0, 1]."""
    if not lambda_a > 0:
        raise ValueError("lambda_a must be positive")
    return min(1.0, max(0.0, 1.0 - throughput(acc, n) / lambda_a))


def direct_drop_rate(acc: MetricAccumulator, n: int) -> float:
    """Counted drops (sensing + overflow) over counted arrivals."""
    acc._need_slots()
    if acc.arrivals[n] == 0:
        return 0.0
    return (acc.dropped_sensing[n] + acc.dropped_overflow[n]) / acc.arrivals[n]


def loss_rate(d: float, ber: float, K: float) -> float:
    if not 0 <= d <= 1 or not 0 <= ber < 1:
        raise ValueError("need 0 <= d <= 1 and 0 <= ber < 1")
    return 1.0 - (1.0 - ber) ** K * (1.0 - d)


def average_delay(acc: MetricAccumulator, n: int) -> float:
    """Little's-law delay in slots; ``inf`` if packets queue but none are served."""
    q_bar = acc.avg_queue(n)
    if q_bar == 0:
        return 0.0
    r_bar = throughput(acc, n)
    if r_bar == 0:
        return math.inf
    return q_bar / r_bar


def metric_rows(run_id, acc: MetricAccumulator, lambda_a: Sequence[float],
                ber: Sequence[float], K: float, eta: Sequence[float] | None = None) -> list[dict]:
    rows = []
    for n in range(acc.N):
        d = drop_rate(acc, n, lambda_a[n])
        rows.append({
            "run_id": run_id,
            "n": n,
            "slots": acc.slots,
            "throughput": throughput(acc, n),
            "drop_rate": d,
            "loss_rate": loss_rate(d, ber[n], K),
            "avg_delay": average_delay(acc, n),
            "avg_queue": acc.avg_queue(n),
            "avg_battery": acc.avg_battery(n),
            "lm_eta": float("nan") if eta is None else float(eta[n]),
        })
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metric_csv(path, rows: Iterable[dict], extra: Sequence[str] = ()) -> None:
    """Write rows under the fixed header; ``path`` may also be an open text stream."""
    header = list(CSV_HEADER) + list(extra)
    if hasattr(path, "write"):
        _write_rows(path, rows, header)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, rows, header)


def _write_rows(fh, rows, header) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(k, "")) for k in header])
