"""How the learner's drop rate moves with sensing efficiency, harvest rate and load.

Each row averages a few learner runs; all grid points reuse the same random
streams so the differences are not swamped by sampling noise.
"""

import argparse

import numpy as np

from ehwsn.amdp_osl import simulate_osl
from ehwsn.harness import load_config, replication_rngs
from ehwsn.metrics import average_delay, drop_rate

ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
ap.add_argument("--horizon", type=int, default=100_000)
ap.add_argument("--seeds", type=int, default=3)
args = ap.parse_args()

base = load_config(None)
grids = {"gamma": (0.6, 1.0, 1.4), "lambda_E": (0.8, 1.2, 1.6), "lambda_A": (0.6, 1.0, 1.4)}

for var, grid in grids.items():
    print(f"\n{var:>9}  drop   delay")
    for x in grid:
        rc = base.with_value(var, x)
        model = rc.system_model()
        drops, delays = [], []
        for rng in replication_rngs(0, args.seeds):
            run = simulate_osl(model, args.horizon, seed=rng)
            drops.append(drop_rate(run.acc, 0, model.lambda_a(0)))
            delays.append(average_delay(run.acc, 0))
        print(f"{x:>9}  {np.mean(drops):.3f}  {np.mean(delays):.2f}")
