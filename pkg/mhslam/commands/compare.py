from __future__ import annotations

import argparse

from mhslam.commands import add_sim_arguments
from mhslam.commands import sim_config_from_args
from mhslam.evaluation import compare_strategies
from mhslam.utils.helpers import parse_seeds


def cmd_compare(args: argparse.Namespace) -> int:
    seeds = parse_seeds(args.seeds)
    table = compare_strategies(sim_config_from_args(args), seeds, workers=args.workers)
    table.write(args.out_prefix)
    summary = table.summary()
    for row in summary.itertuples(index=False):
        print(f"{row.strategy:<8} {row.metric:<28} median {row.median:.6g} (q1 {row.q1:.6g}, q3 {row.q3:.6g})")
    return 0


def load(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("compare", help="Run every strategy over several simulated seeds.")
    parser.add_argument("--seeds", required=True, help="Seed count K (seeds 0..K-1) or a list like 1,2,5-8.")
    parser.add_argument("--out-prefix", required=True, help="Prefix of the CSV files to write.")
    parser.add_argument("--workers", type=int, default=None, help="Process pool size (default MHSLAM_WORKERS).")
    add_sim_arguments(parser)
    parser.set_defaults(handler=cmd_compare)
