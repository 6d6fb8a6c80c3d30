"""Command-line entry point: ``ehwsn {simulate,solve,compare,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import ConfigError, RunSpec, run_compare, run_simulate, run_solve, run_sweep
from .mdp_core import StateSpaceTooLarge
from .ovi_solver import InfeasibleError, NonConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 2, 3

_DRIVERS = {"simulate": run_simulate, "solve": run_solve, "compare": run_compare, "sweep": run_sweep}


def _grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("empty grid")
    return grid


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ehwsn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="mode", required=True)
    helps = {
        "simulate": "run the online learner and write metrics",
        "solve": "solve the constrained MDP offline",
        "compare": "oracle against learner on one config",
        "sweep": "learner metrics over a grid of one variable",
    }
    for mode, text in helps.items():
        p = sub.add_parser(mode, help=text)
        p.add_argument("--config", help="INI config file (defaults if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=int, help="slots per learner run")
        p.add_argument("--out", help="output file (directory for solve); stdout if omitted")
        p.add_argument("--sweep-var", dest="sweep_var")
        p.add_argument("--sweep-grid", dest="sweep_grid", type=_grid, help="comma-separated values")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = RunSpec(args.mode, args.config, args.seed, args.horizon, args.sweep_var, args.sweep_grid, args.out)
        _DRIVERS[args.mode](spec)
    except (ConfigError, StateSpaceTooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, InfeasibleError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
