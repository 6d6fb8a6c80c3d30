"""Single sensor node: exact constrained optimum next to the online learner.

The oracle knows the arrival, harvest and channel laws and solves the
constrained MDP by relative value iteration inside a multiplier search.  The
learner knows none of them and adapts its value table and multiplier from
one trajectory.  Run with ``python demos/oracle_vs_learner.py``.
"""

import argparse

import numpy as np

from ehwsn.amdp_osl import simulate_osl
from ehwsn.harness import load_config, replication_rngs
from ehwsn.mdp_core import MdpModel
from ehwsn.metrics import average_delay, drop_rate
from ehwsn.ovi_solver import dual_solve, evaluate_policy, full_rvi

ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
ap.add_argument("--horizon", type=int, default=200_000)
ap.add_argument("--seeds", type=int, default=3)
args = ap.parse_args()

rc = load_config(None)
model = rc.system_model()
mdp = MdpModel(model)
print(f"{len(mdp.space)} states, {len(mdp.actions)} actions, delay bound {model.cfg.D_max} slots")

# Without the delay constraint the optimal policy hoards packets.
free = evaluate_policy(mdp, full_rvi(mdp, 0.0).policy)
print(f"unconstrained optimum: drop {free.drop_rate[0]:.4f}, delay {free.delay[0]:.2f}")

res = dual_solve(mdp)
ev = res.evaluation
print(f"constrained optimum:   drop {ev.drop_rate[0]:.4f}, delay {ev.delay[0]:.2f}, "
      f"multiplier {res.eta[0]:.5f} after {len(res.probes)} solves")

lam = model.lambda_a(0)
drops, delays = [], []
for j, rng in enumerate(replication_rngs(0, args.seeds)):
    run = simulate_osl(model, args.horizon, seed=rng)
    drops.append(drop_rate(run.acc, 0, lam))
    delays.append(average_delay(run.acc, 0))
    print(f"learner run {j}: drop {drops[-1]:.4f}, delay {delays[-1]:.2f}, multiplier {run.eta[0]:.5f}")

print(f"learner / oracle drop ratio: {np.mean(drops) / ev.drop_rate[0]:.3f} "
      f"over {args.seeds} runs of {args.horizon} slots")
