from __future__ import annotations

import argparse
import logging
from pathlib import Path

from mhslam.ambiguity_sim import run_simulation
from mhslam.commands import add_sim_arguments
from mhslam.commands import sim_config_from_args
from mhslam.dataset import format_groundtruth
from mhslam.dataset import serialize_dataset

log = logging.getLogger(__name__)


def write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_simulate(args: argparse.Namespace) -> int:
    sim = run_simulation(sim_config_from_args(args, args.seed))
    graph, initial = sim.to_graph()
    write_text(args.out, serialize_dataset(graph, initial))
    write_text(args.gt_out, format_groundtruth(sim.groundtruth()))
    return 0


def load(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("simulate", help="Generate a dataset and its groundtruth.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="Dataset file to write.")
    parser.add_argument("--gt-out", required=True, help="Groundtruth file to write.")
    add_sim_arguments(parser)
    parser.set_defaults(handler=cmd_simulate)
