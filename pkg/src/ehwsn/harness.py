"""Configuration, seeding and the four experiment drivers behind the CLI.

Config files are INI-style ``key = value`` sections::

    [env]        N, Q_max, B_max, tau, W, K, N0, xi, gamma, ber, D_max, omega, gain_scale
    [arrivals]   lambda_A, lambda_E, energy_law (two_point | poisson), a_max
    [channel]    kind (markov | iid), states, gains, transition, probs
    [learner]    alpha_v, alpha_eta, c_v, c_eta, explore_c, explore_beta, eta0, learn_eta, warmup_frac
    [solver]     tol, max_sweeps, aperiodicity, outer_iters, refine_iters, state_cap
    [run]        seed, horizon, sweep_horizon, replications, sweep_var, sweep_grid, oracle, trace

Every key is optional.  Per-node keys (``xi``, ``ber``, ``omega``,
``lambda_A``, ``lambda_E``) take one value or a comma list with one entry per
node.  Matrix rows in ``transition`` are separated by ``|``.

Seeding: replication ``j`` of any run uses child ``j`` of
``numpy.random.SeedSequence(seed)`` driving a PCG64 generator.  The same
children are reused at every sweep point, so grid points are compared under
common random numbers.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .amdp_osl import ExplorationSchedule, NodeRadio, StepSizeSchedule, optimal_power, simulate_osl
from .amdp_osl.controller import TRACE_FIELDS
from .mdp_core import DEFAULT_STATE_CAP, MdpModel
from .metrics import (
    CSV_HEADER,
    average_delay,
    drop_rate,
    loss_rate,
    metric_rows,
    write_metric_csv,
)
from .ovi_solver import dual_solve, full_rvi, write_policy_csv, write_values_csv
from .sim_env import (
    ArrivalModel,
    ChannelModel,
    EnvConfig,
    NodeState,
    SystemModel,
    poisson_pmf,
    transmit_rate,
    truncated_poisson_pmf,
    two_point_energy_pmf,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunSpec",
    "CompareReport",
    "load_config",
    "parse_config",
    "dump_config",
    "replication_rngs",
    "run_simulate",
    "run_solve",
    "run_compare",
    "run_sweep",
    "SWEEP_EXTRA",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _matrix(s: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(row) for row in s.split("|"))


def _words(s: str) -> tuple[str, ...]:
    return tuple(w for w in s.replace(",", " ").split())


def _choice(*options):
    def parse(s):
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


# section -> key -> (parser, default); ``None`` defaults are derived later
SCHEMA: dict[str, dict[str, tuple[Callable, object]]] = {
    "env": {
        "N": (_int, 1),
        "Q_max": (_int, 5),
        "B_max": (_int, 10),
        "tau": (float, 1.0),
        "W": (float, 3e5),
        "K": (float, 1e5),
        "N0": (float, 1e-16),
        "xi": (_floats, (0.283,)),
        "gamma": (float, 1.0),
        "ber": (_floats, (1e-3,)),
        "D_max": (float, 3.0),
        "omega": (_floats, (1.0,)),
        "gain_scale": (float, 100.0),
    },
    "arrivals": {
        "lambda_A": (_floats, (1.0,)),
        "lambda_E": (_floats, (1.2,)),
        "energy_law": (_choice("two_point", "poisson"), "two_point"),
        "a_max": (_int, None),
    },
    "channel": {
        "kind": (_choice("markov", "iid"), "markov"),
        "states": (_words, ("B", "N", "G")),
        "gains": (_floats, (2e-13, 4e-13, 6e-13)),
        "transition": (_matrix, ((0.3, 0.7, 0.0), (0.25, 0.5, 0.25), (0.0, 0.7, 0.3))),
        "probs": (_floats, None),
    },
    "learner": {
        "alpha_v": (float, 0.6),
        "alpha_eta": (float, 0.9),
        "c_v": (float, 1.0),
        "c_eta": (float, 1.0),
        "explore_c": (float, ExplorationSchedule().c),
        "explore_beta": (float, ExplorationSchedule().beta),
        "eta0": (_floats, (0.0,)),
        "learn_eta": (_bool, True),
        "warmup_frac": (float, 0.1),
    },
    "solver": {
        "tol": (float, 1e-9),
        "max_sweeps": (_int, 100000),
        "aperiodicity": (float, 0.5),
        "outer_iters": (_int, 60),
        "refine_iters": (_int, 30),
        "state_cap": (_int, DEFAULT_STATE_CAP),
    },
    "run": {
        "seed": (_int, 0),
        "horizon": (_int, 1_000_000),
        "sweep_horizon": (_int, 200_000),
        "replications": (_int, 1),
        "sweep_var": (str, None),
        "sweep_grid": (_floats, None),
        "oracle": (_bool, False),
        "trace": (_bool, False),
    },
}

_KEY_SECTION = {k: sec for sec, keys in SCHEMA.items() for k in keys}


def _per_node(name: str, v: tuple, N: int) -> tuple:
    if len(v) >= 1 and all(x == v[0] for x in v):
        return (v[0],) * N
    if len(v) != N:
        raise ConfigError(name, f"needs 1 or {N} values, got {len(v)}")
    return v


@dataclass(frozen=True)
class RunConfig:
    """Validated settings; ``values`` holds every key after defaults are filled."""

    values: dict = field(repr=False)
    env: EnvConfig
    channel: ChannelModel
    arrivals: tuple
    schedule: StepSizeSchedule
    explore: ExplorationSchedule

    def __getitem__(self, key):
        return self.values[key]

    def system_model(self) -> SystemModel:
        return SystemModel(self.env, self.channel, self.arrivals)

    @property
    def solver_kw(self) -> dict:
        v = self.values
        return {"tol": v["tol"], "max_sweeps": v["max_sweeps"], "aperiodicity": v["aperiodicity"]}

    def with_value(self, key: str, value) -> "RunConfig":
        """Copy with one key replaced (used by sweeps); revalidates everything."""
        if key not in _KEY_SECTION:
            raise ConfigError(key, "unknown sweep variable")
        vals = dict(self.values)
        vals[key] = SCHEMA[_KEY_SECTION[key]][key][0](str(value))
        return build_config(vals)


def _read_parser(cp: configparser.ConfigParser) -> dict:
    vals: dict = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(key, f"unknown key in [{sec}]")
            try:
                vals[key] = SCHEMA[sec][key][0](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(key, f"cannot parse {raw!r} ({exc})") from None
    return vals


def build_config(given: dict) -> RunConfig:
    """Fill defaults, cross-check and construct the model objects."""
    vals = {k: d for sec in SCHEMA.values() for k, (_, d) in sec.items()}
    vals.update({k: v for k, v in given.items() if not k.startswith("_")})
    # a derived a_max is recomputed whenever the config is rebuilt
    a_given = given["_a_max_given"] if "_a_max_given" in given else given.get("a_max")
    vals["_a_max_given"] = vals["a_max"] = a_given
    N = vals["N"]
    if N < 1:
        raise ConfigError("N", "must be >= 1")
    for k in ("xi", "ber", "omega", "lambda_A", "lambda_E", "eta0"):
        vals[k] = _per_node(k, tuple(vals[k]), N)
    env_kw = {k: vals[k] for k in SCHEMA["env"]}
    try:
        env = EnvConfig(**env_kw)
    except ValueError as exc:
        name = str(exc).split()[0]
        raise ConfigError(name if name in env_kw else "env", str(exc)) from None

    try:
        if vals["kind"] == "iid":
            probs = vals["probs"]
            if probs is None:
                raise ConfigError("probs", "required for an iid channel")
            channel = ChannelModel.iid(vals["states"], vals["gains"], probs)
        else:
            channel = ChannelModel(tuple(vals["states"]), np.array(vals["gains"], dtype=float),
                                   np.array(vals["transition"], dtype=float))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("transition" if vals["kind"] == "markov" else "probs", str(exc)) from None

    for k in ("lambda_A", "lambda_E"):
        if any(x < 0 or not math.isfinite(x) for x in vals[k]):
            raise ConfigError(k, "must be nonnegative and finite")
    a_max = vals["a_max"]
    if a_max is None:
        a_max = env.Q_max + max(transmit_rate(h, env.B_max, env, channel, n)
                                for h in range(channel.n_states) for n in range(N))
        vals["a_max"] = a_max
    elif a_max < 0:
        raise ConfigError("a_max", "must be nonnegative")
    energy = two_point_energy_pmf if vals["energy_law"] == "two_point" else (
        lambda lam: truncated_poisson_pmf(lam, env.B_max))
    arrivals = tuple(ArrivalModel(poisson_pmf(la, a_max), energy(le))
                     for la, le in zip(vals["lambda_A"], vals["lambda_E"]))

    try:
        schedule = StepSizeSchedule(vals["alpha_v"], vals["alpha_eta"], vals["c_v"], vals["c_eta"])
    except ValueError as exc:
        raise ConfigError("alpha_v", str(exc)) from None
    try:
        explore = ExplorationSchedule(vals["explore_c"], vals["explore_beta"])
    except ValueError as exc:
        raise ConfigError("explore_c", str(exc)) from None
    if any(x < 0 for x in vals["eta0"]):
        raise ConfigError("eta0", "multipliers must be nonnegative")
    if not 0 <= vals["warmup_frac"] < 1:
        raise ConfigError("warmup_frac", "must lie in [0, 1)")
    for k in ("tol", "aperiodicity"):
        if not vals[k] > 0:
            raise ConfigError(k, "must be positive")
    if vals["aperiodicity"] > 1:
        raise ConfigError("aperiodicity", "must lie in (0, 1]")
    for k in ("max_sweeps", "outer_iters", "horizon", "sweep_horizon", "replications", "state_cap"):
        if vals[k] < 1:
            raise ConfigError(k, "must be >= 1")
    if vals["refine_iters"] < 0:
        raise ConfigError("refine_iters", "must be >= 0")
    if vals["sweep_grid"] is not None and len(vals["sweep_grid"]) == 0:
        raise ConfigError("sweep_grid", "must not be empty")
    return RunConfig(vals, env, channel, arrivals, schedule, explore)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse ({exc.__class__.__name__})") from None
    return build_config(_read_parser(cp))


def load_config(path) -> RunConfig:
    """Read and validate a config file; missing keys take their defaults."""
    if path is None:
        return build_config({})
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path} ({exc.strerror})") from None
    return parse_config(text)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return " | ".join(" ".join(repr(float(x)) for x in row) for row in v)
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(rc: RunConfig) -> str:
    """Canonical text of a config; parsing it gives back the same settings."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for k in keys:
            v = rc.values[k]
            if v is None or (k == "a_max" and rc.values.get("_a_max_given") is None):
                continue
            out.append(f"{k} = {_fmt_value(v)}")
        out.append("")
    return "\n".join(out)


def replication_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


# -- run request ------------------------------------------------------------------

MODES = ("simulate", "solve", "compare", "sweep")


@dataclass(frozen=True)
class RunSpec:
    mode: str
    config: str | None = None
    seed: int | None = None
    horizon: int | None = None
    sweep_var: str | None = None
    sweep_grid: tuple | None = None
    out: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon", "must be >= 1")
        if self.sweep_grid is not None and len(self.sweep_grid) == 0:
            raise ConfigError("sweep_grid", "must not be empty")

    def resolve(self, rc: RunConfig | None = None) -> RunConfig:
        """Config from file with command-line overrides applied."""
        rc = rc if rc is not None else load_config(self.config)
        over = {}
        if self.seed is not None:
            over["seed"] = int(self.seed)
        if self.horizon is not None:
            over["horizon"] = over["sweep_horizon"] = int(self.horizon)
        if self.sweep_var is not None:
            over["sweep_var"] = self.sweep_var
        if self.sweep_grid is not None:
            over["sweep_grid"] = tuple(self.sweep_grid)
        if over:
            vals = {k: v for k, v in rc.values.items()}
            vals.update(over)
            rc = build_config(vals)
        return rc


def _open_out(path):
    if path is None:
        return None
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return path


def _sidecar(path: str, tag: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.{tag}{ext or '.csv'}"


def _safe_drop(acc, n: int, lam: float) -> float:
    return 0.0 if lam == 0 else drop_rate(acc, n, lam)


def _learner_run(rc: RunConfig, rng, horizon: int, **kw):
    v = rc.values
    return simulate_osl(rc.system_model(), horizon, seed=rng, schedule=rc.schedule, eta0=v["eta0"],
                        learn_eta=v["learn_eta"], warmup_frac=v["warmup_frac"], explore=rc.explore, **kw)


def run_simulate(spec: RunSpec, rc: RunConfig | None = None) -> list[dict]:
    """Learner runs, one per replication; metrics rows per node.

    With ``out`` set, writes the metrics CSV there, the message counts to
    ``<out>.messages.csv`` and, if ``trace = true``, the slot trace to
    ``<out>.trace.csv``.
    """
    rc = spec.resolve(rc)
    v = rc.values
    reps = v["replications"]
    rows, msg_rows = [], []
    want_trace = v["trace"] and spec.out is not None
    if spec.out:
        _open_out(spec.out)
    for j, rng in enumerate(replication_rngs(v["seed"], reps)):
        trace = [] if want_trace else None
        run = _learner_run(rc, rng, v["horizon"], trace=trace)
        lam = [rc.arrivals[n].lambda_a for n in range(rc.env.N)]
        rows.extend(_metric_rows_safe(f"rep{j}", run.acc, lam, rc, run.eta))
        for kind in ("bid", "schedule", "rs_flag", "empty_flag"):
            msg_rows.append((j, kind, run.messages[kind]))
        msg_rows.append((j, "max_excess_over_bound", run.max_messages_excess))
        if want_trace:
            with open(_sidecar(spec.out, "trace"), "w" if j == 0 else "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if j == 0:
                    w.writerow(("replication",) + TRACE_FIELDS)
                w.writerows((j,) + r for r in trace)
    if spec.out:
        write_metric_csv(spec.out, rows)
        with open(_sidecar(spec.out, "messages"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "message", "count"])
            w.writerows(msg_rows)
    else:
        write_metric_csv(sys.stdout, rows)
    return rows


def _metric_rows_safe(run_id, acc, lam, rc: RunConfig, eta) -> list[dict]:
    cfg = rc.env
    if all(x > 0 for x in lam):
        return metric_rows(run_id, acc, lam, cfg.ber, cfg.K, eta)
    rows = metric_rows(run_id, acc, [x if x > 0 else 1.0 for x in lam], cfg.ber, cfg.K, eta)
    for r, x in zip(rows, lam):
        if x == 0:
            r["drop_rate"] = 0.0
            r["loss_rate"] = loss_rate(0.0, cfg.ber[r["n"]], cfg.K)
    return rows


def _solve(rc: RunConfig):
    v = rc.values
    mdp = MdpModel(rc.system_model(), cap=v["state_cap"])
    res = dual_solve(mdp, eta0=v["eta0"], outer_iters=v["outer_iters"], refine_iters=v["refine_iters"],
                     **rc.solver_kw)
    return mdp, res


def run_solve(spec: RunSpec, rc: RunConfig | None = None):
    """Offline constrained optimum; writes values, policy, kernel and summary under ``out``."""
    rc = spec.resolve(rc)
    mdp, res = _solve(rc)
    ev = res.evaluation
    summary = [("theta", res.theta), ("objective", ev.objective)]
    for n in range(rc.env.N):
        summary += [(f"eta_{n}", float(res.eta[n])), (f"drop_rate_{n}", float(ev.drop_rate[n])),
                    (f"avg_delay_{n}", float(ev.delay[n])), (f"avg_queue_{n}", float(ev.avg_queue[n]))]
    summary.append(("probes", len(res.probes)))
    if spec.out:
        os.makedirs(spec.out, exist_ok=True)
        rvi = full_rvi(mdp, res.eta, **rc.solver_kw)
        write_values_csv(os.path.join(spec.out, "values.csv"), rvi.values)
        write_policy_csv(os.path.join(spec.out, "policy.csv"), res.policy)
        mdp.kernel.export(os.path.join(spec.out, "kernel.txt"))
        with open(os.path.join(spec.out, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "value"])
            w.writerows((k, repr(x) if isinstance(x, float) else x) for k, x in summary)
    else:
        for k, x in summary:
            print(f"{k} = {x!r}")
    return res


# -- learner vs oracle -----------------------------------------------------------------

@dataclass
class CompareReport:
    learner_drop: float
    oracle_drop: float
    drop_ratio: float
    learner_loss: float
    oracle_loss: float
    loss_ratio: float
    learner_delay: float
    oracle_delay: float
    oracle_theta: float
    oracle_eta: float
    learner_eta: float
    policy_agreement: float
    replications: int
    learner_drops: list = field(default_factory=list)
    learner_delays: list = field(default_factory=list)

    def render(self) -> str:
        lines = []
        for k, v in self.__dict__.items():
            if isinstance(v, list):
                v = " ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _ratio(a: float, b: float) -> float:
    if a == 0 and b == 0:
        return 1.0
    if b == 0:
        return math.inf
    return a / b


def learner_policy_agreement(run, mdp: MdpModel, oracle_policy: np.ndarray, visits: set, model: SystemModel) -> float:
    """Fraction of visited states where the learner's greedy energy equals the oracle's."""
    if not visits:
        return 1.0
    agent = run.controller.agents[0]
    radio = NodeRadio(model, 0)
    agree = 0
    for S in visits:
        s = S[0]
        p_learn = optimal_power(NodeState(*s), agent.table, agent.eta, radio)
        p_oracle = sum(mdp.actions[oracle_policy[mdp.space.index[S]]])
        agree += p_learn == p_oracle
    return agree / len(visits)


def run_compare(spec: RunSpec, rc: RunConfig | None = None) -> CompareReport:
    """Oracle (dual loop on the exact model) against the learner on the same config."""
    rc = spec.resolve(rc)
    if rc.env.N != 1:
        raise ConfigError("N", "compare needs a single node (oracle tractability)")
    v = rc.values
    lam = rc.arrivals[0].lambda_a
    reps = v["replications"]
    ber, K = rc.env.ber[0], rc.env.K
    if lam == 0:
        rep = CompareReport(0.0, 0.0, 1.0, loss_rate(0.0, ber, K), loss_rate(0.0, ber, K), 1.0,
                            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, reps, [0.0] * reps, [0.0] * reps)
    else:
        mdp, res = _solve(rc)
        ev = res.evaluation
        model = rc.system_model()
        drops, delays, etas, agreements = [], [], [], []
        for rng in replication_rngs(v["seed"], reps):
            visits: set = set()
            run = _learner_run(rc, rng, v["horizon"], visits=visits)
            drops.append(_safe_drop(run.acc, 0, lam))
            delays.append(average_delay(run.acc, 0))
            etas.append(run.eta[0])
            agreements.append(learner_policy_agreement(run, mdp, res.policy, visits, model))
        ld, od = float(np.mean(drops)), float(ev.drop_rate[0])
        ll, ol = loss_rate(ld, ber, K), loss_rate(od, ber, K)
        rep = CompareReport(ld, od, _ratio(ld, od), ll, ol, _ratio(ll, ol), float(np.mean(delays)),
                            float(ev.delay[0]), res.theta, float(res.eta[0]), float(np.mean(etas)),
                            float(np.mean(agreements)), reps, drops, delays)
    text = rep.render()
    if spec.out:
        _open_out(spec.out)
        with open(spec.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return rep


# -- sweeps ------------------------------------------------------------------------------

SWEEP_EXTRA = ("sweep_var", "sweep_value", "replication", "status")
ORACLE_EXTRA = ("oracle_theta", "oracle_eta", "oracle_drop", "oracle_probes")


def _nan_rows(run_id: str, N: int) -> list[dict]:
    return [{"run_id": run_id, "n": n, **{k: float("nan") for k in CSV_HEADER[2:]}} for n in range(N)]


def run_sweep(spec: RunSpec, rc: RunConfig | None = None, progress: Callable | None = None) -> list[dict]:
    """One learner run per (grid point, replication); rows per node, in grid order.

    A failing grid point yields NaN rows with the error in ``status``; the
    sweep continues.
    """
    rc = spec.resolve(rc)
    v = rc.values
    var, grid = v["sweep_var"], v["sweep_grid"]
    if var is None:
        raise ConfigError("sweep_var", "required for a sweep")
    if var not in _KEY_SECTION:
        raise ConfigError("sweep_var", f"unknown variable {var!r}")
    if grid is None:
        raise ConfigError("sweep_grid", "required for a sweep")
    reps, horizon = v["replications"], v["sweep_horizon"]
    extra = SWEEP_EXTRA + (ORACLE_EXTRA if v["oracle"] else ())
    rows = []
    for x in grid:
        try:
            point = rc.with_value(var, x if var not in ("N", "Q_max", "B_max") else int(x))
            err = None
        except (ConfigError, ValueError) as exc:
            point, err = None, f"error: {exc}"
        oracle = {}
        if point is not None and v["oracle"]:
            try:
                _, res = _solve(point)
                oracle = {"oracle_theta": res.theta, "oracle_eta": float(res.eta[0]),
                          "oracle_drop": float(res.evaluation.drop_rate[0]), "oracle_probes": len(res.probes)}
            except Exception as exc:  # recorded per row, sweep goes on
                oracle = {"oracle_theta": float("nan")}
                log.warning("oracle failed at %s=%s: %s", var, x, exc)
        for j, rng in enumerate(replication_rngs(v["seed"], reps)):
            run_id = f"{var}={x!r}/rep{j}"
            status = err
            if point is not None:
                try:
                    run = _learner_run(point, rng, horizon)
                    lam = [point.arrivals[n].lambda_a for n in range(point.env.N)]
                    pr = _metric_rows_safe(run_id, run.acc, lam, point, run.eta)
                    status = "ok"
                except Exception as exc:  # recorded per row, sweep goes on
                    status = f"error: {exc.__class__.__name__}: {exc}"
                    pr = _nan_rows(run_id, point.env.N)
            else:
                pr = _nan_rows(run_id, rc.env.N)
            for r in pr:
                r.update({"sweep_var": var, "sweep_value": float(x), "replication": j, "status": status}, **oracle)
            rows.extend(pr)
            if progress is not None:
                progress(x, j, status)
    if spec.out:
        _open_out(spec.out)
    write_metric_csv(spec.out or sys.stdout, rows, extra)
    return rows
