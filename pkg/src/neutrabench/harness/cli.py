"""``neutrabench`` command line.

Exit codes: 0 success, 1 sampler or training failure (the run manifest
carries an ``error`` record), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from neutrabench.harness.config import METHODS, MODELS, ConfigError, load_config
from neutrabench.harness.runner import (
    RunFailed,
    run_bench,
    run_corner,
    run_experiment,
    run_ground_truth,
    run_train_flow,
)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

# CLI flag -> config field; ``None`` defaults mean "keep the config file / model default"
_CONFIG_FLAGS = {
    "model": dict(choices=MODELS),
    "method": dict(choices=METHODS),
    "seed": dict(type=int),
    "n_live": dict(type=int),
    "frac_remain": dict(type=float),
    "chains": dict(type=int),
    "warmup": dict(type=int),
    "samples": dict(type=int),
    "target_accept": dict(type=float),
    "step_size": dict(type=float),
    "max_depth": dict(type=int),
    "flow_stacks": dict(type=int),
    "flow_hidden": dict(type=int, nargs="+"),
    "epochs": dict(type=int),
    "batch": dict(type=int),
    "learning_rate": dict(type=float),
    "flow_path": dict(),
    "dataset_path": dict(),
    "dataset_seed": dict(type=int),
    "repetitions": dict(type=int),
    "methods": dict(nargs="+", choices=METHODS),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or a run manifest")
    p.add_argument("--output", "-o", help="output directory")
    for name, kw in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)
    p.add_argument("--stochastic-shrinkage", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neutrabench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_flags(sub.add_parser("run", help="run one sampler pipeline"))
    _add_config_flags(sub.add_parser("bench", help="repeat every method and tabulate per-ESS costs"))
    gt = sub.add_parser("ground-truth", help="quadrature evidence trace and contour field")
    _add_config_flags(gt)
    gt.add_argument("--points-per-dim", type=int, default=151)
    gt.add_argument("--contour-points", type=int, default=201)
    _add_config_flags(sub.add_parser("train-flow", help="train and save a NeuTra flow"))

    corner = sub.add_parser("corner", help="histogram data for corner plots")
    corner.add_argument("runs", nargs="+", help="run directories")
    corner.add_argument("--output", "-o", required=True)
    corner.add_argument("--bins", type=int, default=40)
    corner.add_argument("--pairs", action="store_true", default=None, help="emit 2-D grids for a single run too")
    return parser


def _config(args):
    overrides = {name: getattr(args, name) for name in _CONFIG_FLAGS}
    overrides["stochastic_shrinkage"] = args.stochastic_shrinkage
    if args.command == "train-flow" and overrides["method"] is None:
        overrides["method"] = "neutra-ns"
    return load_config(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose:
        logging.getLogger("neutrabench").setLevel(logging.INFO)
    try:
        if args.command == "corner":
            out = run_corner(args.runs, args.output, bins=args.bins, pairs=args.pairs)
            print(out)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "run":
            art = run_experiment(cfg, args.output)
            print(art.directory)
        elif args.command == "bench":
            print(run_bench(cfg, args.output))
        elif args.command == "ground-truth":
            summary = run_ground_truth(cfg, args.output, args.points_per_dim, args.contour_points)
            print(f"log_z = {summary['log_z']:.10f} converged = {summary['converged']}")
        elif args.command == "train-flow":
            out, trace = run_train_flow(cfg, args.output)
            print(f"{out} final_mean_elbo = {trace.final_mean_elbo:.6f}")
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"neutrabench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailed as exc:
        print(f"neutrabench: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
