from __future__ import annotations

import argparse
import logging
from pathlib import Path

from mhslam.commands.simulate import write_text
from mhslam.config import Config
from mhslam.dataset import format_estimates
from mhslam.dataset import parse_dataset
from mhslam.evaluation import StrategyKind
from mhslam.evaluation import collapse_graph
from mhslam.factor_graph import FactorGraph
from mhslam.factor_graph import PriorFactor
from mhslam.factor_graph import VariableKey
from mhslam.factor_graph import information_from_sigmas
from mhslam.pose_algebra import identity
from mhslam.solver import incremental_solve
from mhslam.solver import stream_from_graph

log = logging.getLogger(__name__)


def cmd_solve(args: argparse.Namespace) -> int:
    graph, initial = parse_dataset(Path(args.input).read_text())
    graph = collapse_graph(graph, args.strategy, args.seed)

    # gauge: anchor the first robot pose where the dataset puts it
    first = VariableKey.robot(0)
    prior = PriorFactor(
        first,
        initial.get(first, identity()),
        information_from_sigmas(Config.PRIOR_SIGMA_ROT, Config.PRIOR_SIGMA_TRANS),
    )
    anchored = FactorGraph([prior, *graph])

    estimates = incremental_solve(stream_from_graph(anchored, initial))
    write_text(args.out, format_estimates(estimates))
    log.info("solved %s with %s over %d timesteps", args.input, args.strategy, len(estimates))
    return 0


def load(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("solve", help="Run the incremental backend over a dataset.")
    parser.add_argument("--in", dest="input", required=True, help="Dataset file to read.")
    parser.add_argument("--strategy", choices=[s.value for s in StrategyKind], default=StrategyKind.MAX_MIXTURE.value)
    parser.add_argument("--out", required=True, help="Estimates file to write.")
    parser.add_argument("--seed", type=int, default=0, help="Seed for the random-selection strategy.")
    parser.set_defaults(handler=cmd_solve)
