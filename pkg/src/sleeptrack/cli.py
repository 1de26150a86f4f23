"""Command-line entry point: build tables, run sweeps, replay episodes."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import cost_tables, lower_bound, sim
from .exceptions import ConfigError, ConvergenceError
from .model import make_network
from .policy import default_u_max
from .sim import LearningSchedule

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5

SEED_ENV_VAR = "SLEEPTRACK_SEED"

DEFAULT_C_GRIDS = {
    "A": (0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.45, 1.0),
    "B": (0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0),
    "C": (0.05, 0.1, 0.25, 0.5, 1.0),
}

# Post-peak windows where the price-weighted energy rate falls monotonically.
# Near c = 0 the weighted rate c * usage necessarily rises with c (usage is
# bounded), so monotone tradeoff checks only make sense from the peak on.
MONOTONE_C_GRIDS = {
    "A": (0.08, 0.1, 0.15, 0.2, 0.3, 0.45, 0.6, 1.0),
    "B": (0.1, 0.15, 0.2, 0.3, 0.45, 0.6, 0.8, 1.0),
}

_PLOT_STUB = """# gnuplot script for sleeptrack tradeoff curves
# usage: gnuplot -p {script}
set datafile separator ','
set xlabel 'energy cost per unit time'
set ylabel 'tracking cost per unit time'
set key outside
plot for [p in policies] csvfile \\
    using (column('energy_per_time')):(column('tracking_per_time')) \\
    every ::0 with linespoints title p
"""


def _seed_from(args) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return args.seed


def _c_grid(args, model) -> list[float]:
    if args.c_grid:
        try:
            grid = [float(tok) for tok in args.c_grid.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"bad --c-grid value {args.c_grid!r}")
    else:
        grid = list(DEFAULT_C_GRIDS.get(model.name, (0.05, 0.1, 0.2, 0.4)))
    if not grid or any(c <= 0 for c in grid) or sorted(grid) != grid:
        raise ConfigError("--c-grid must be positive and sorted ascending")
    return grid


def _parse_policies(tokens):
    """Parse policy specs like qmdp-greedy, fcr-learned, all-asleep."""
    specs = []
    for token in tokens:
        if token in ("all-awake", "all-asleep"):
            specs.append((token, None))
            continue
        kind, _, source = token.partition("-")
        if kind in ("qmdp", "fcr") and source in sim.TABLE_SOURCES:
            specs.append((kind, source))
            continue
        raise ConfigError(
            f"unknown policy {token!r}; expected all-awake, all-asleep, or "
            f"{{qmdp,fcr}}-{{asleep,greedy,learned}}"
        )
    return specs


def cmd_tables(args) -> int:
    model = make_network(args.network, energy_price=args.c)
    if not args.out:
        raise ConfigError("tables needs --out")
    seed = _seed_from(args)
    rng = np.random.default_rng(seed)
    if args.source == "learned":
        init = cost_tables.build_table(model, "greedy", n_mc=args.mc_samples, rng=rng)
        schedule = LearningSchedule(warmup=args.warmup, recorded=0, alpha=args.alpha)
        table, _ = sim.run_learning_campaign(
            model, args.policy_kind, init, schedule, rng, particles=args.particles
        )
    elif args.source == "file":
        raise ConfigError("--source file makes no sense when computing tables")
    else:
        table = cost_tables.build_table(model, args.source, n_mc=args.mc_samples, rng=rng)
    cost_tables.save_table(table, args.out)
    print(f"wrote {table.values.shape[0]}x{table.values.shape[1]} table to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = make_network(args.network)
    policies = _parse_policies(args.policy)
    if not policies:
        raise ConfigError("sweep needs at least one --policy")
    if not args.out:
        raise ConfigError("sweep needs --out")
    if not model.is_finite and args.particles < 2:
        raise ConfigError("continuous networks need --particles >= 2")
    grid = _c_grid(args, model)
    seed = _seed_from(args)
    source_tables = {}
    specs = []
    for kind, source in policies:
        if source is not None and args.tdelta and os.path.exists(args.tdelta):
            source_tables[(kind, source)] = cost_tables.load_table(args.tdelta)
            specs.append((kind, source_tables[(kind, source)]))
        else:
            specs.append((kind, source))
    points = sim.sweep(
        model,
        specs,
        grid,
        runs=args.runs,
        seed=seed,
        schedule=LearningSchedule(warmup=args.warmup, alpha=args.alpha),
        particles=args.particles,
        workers=args.workers,
    )
    if args.lower_bound:
        if not model.is_finite:
            raise ConfigError("the lower bound needs a finite state space")
        search = lower_bound.LambdaSearch(restarts=args.bound_restarts, steps=args.bound_steps)
        bound_points = lower_bound.lb_envelope(
            model, grid, search=search, rng=np.random.default_rng(seed + 1)
        )
        lifetime = sim.expected_lifetime(model)
        for bp in bound_points:
            points.append(
                sim.TradeoffPoint(
                    network=model.name,
                    policy="lower_bound",
                    tdelta_source="none",
                    c=bp.c,
                    tracking_per_time=bp.tracking / lifetime,
                    tracking_se=0.0,
                    energy_per_time=bp.energy / lifetime,
                    energy_se=0.0,
                    runs=0,
                    seed=seed,
                )
            )
    sim.write_tradeoff_csv(points, args.out)
    stub = os.path.splitext(args.out)[0] + ".gp"
    names = sorted({pt.policy for pt in points})
    with open(stub, "w") as fh:
        fh.write(f"csvfile = '{args.out}'\n")
        fh.write("policies = '" + " ".join(names) + "'\n")
        fh.write(_PLOT_STUB.format(script=stub))
    print(f"wrote {len(points)} tradeoff rows to {args.out} (plot stub: {stub})")
    return EXIT_OK


def cmd_replay(args) -> int:
    model = make_network(args.network, energy_price=args.c)
    seed = _seed_from(args)
    rng = np.random.default_rng(seed)
    (kind, source), = _parse_policies([args.policy[0]] if args.policy else ["all-awake"])
    table = None
    if kind in ("qmdp", "fcr"):
        if args.tdelta:
            table = cost_tables.load_table(args.tdelta)
        else:
            table = cost_tables.build_table(
                model, source if source != "learned" else "greedy",
                n_mc=args.mc_samples, rng=rng,
            )
    policy = sim._build_policy(model, kind, source, table, None, 128)
    result = sim.run_episode(
        model, policy, rng, particles=args.particles, record_trace=True
    )
    lines = ["step,b,b_hat,awake,g"]
    for step, b, b_hat, awake, g in result.trace:
        lines.append(f"{step},{b!r},{b_hat!r},{awake},{g!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(
        f"duration={result.duration} tracking={result.tracking!r} energy={result.energy!r}",
        file=sys.stderr,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sleeptrack",
        description="Energy-aware sensor sleeping policies for object tracking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--network", required=True, help="builtin name (A/B/C) or config path")
        p.add_argument("--seed", type=int, default=0,
                       help=f"base RNG seed (env {SEED_ENV_VAR} overrides)")
        p.add_argument("--particles", type=int, default=512,
                       help="particle count for continuous networks")
        p.add_argument("--mc-samples", type=int, default=200,
                       help="Monte-Carlo samples per table cell")
        p.add_argument("--alpha", type=float, default=0.01, help="learning step size")
        p.add_argument("--warmup", type=int, default=100, help="unrecorded learning episodes")
        p.add_argument("--out", help="output file path")

    p_tables = sub.add_parser("tables", help="compute a tracking-cost increment table")
    common(p_tables)
    p_tables.add_argument("--source", required=True,
                          choices=("asleep", "greedy", "learned", "file"))
    p_tables.add_argument("--c", type=float, default=None,
                          help="energy price (greedy threshold / learning runs)")
    p_tables.add_argument("--policy-kind", default="fcr", choices=("qmdp", "fcr"),
                          help="policy used while learning a table")

    p_sweep = sub.add_parser("sweep", help="run tradeoff-curve sweeps and write CSV")
    common(p_sweep)
    p_sweep.add_argument("--policy", action="append", default=[],
                         help="policy spec (repeatable): all-awake, all-asleep, "
                              "qmdp-{asleep,greedy,learned}, fcr-{...}")
    p_sweep.add_argument("--tdelta", help="path to a precomputed table file")
    p_sweep.add_argument("--c-grid", help="comma-separated ascending energy prices")
    p_sweep.add_argument("--runs", type=int, default=50, help="episodes per point")
    p_sweep.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                         help="parallel sweep workers")
    p_sweep.add_argument("--lower-bound", action="store_true",
                         help="append lower-bound rows (finite Gaussian networks)")
    p_sweep.add_argument("--bound-restarts", type=int, default=20)
    p_sweep.add_argument("--bound-steps", type=int, default=100)

    p_replay = sub.add_parser("replay", help="deterministic single-episode trace dump")
    common(p_replay)
    p_replay.add_argument("--policy", action="append", default=[],
                          help="single policy spec (default all-awake)")
    p_replay.add_argument("--tdelta", help="path to a precomputed table file")
    p_replay.add_argument("--c", type=float, default=None, help="energy price")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"tables": cmd_tables, "sweep": cmd_sweep, "replay": cmd_replay}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
