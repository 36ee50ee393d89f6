from __future__ import annotations

import argparse
from pathlib import Path

from mhslam.dataset import parse_estimates
from mhslam.dataset import parse_groundtruth
from mhslam.evaluation import evaluate_run
from mhslam.evaluation import write_report


def cmd_evaluate(args: argparse.Namespace) -> int:
    estimates = parse_estimates(Path(args.est).read_text())
    groundtruth = parse_groundtruth(Path(args.gt).read_text())
    report = evaluate_run(estimates, groundtruth)
    write_report(report, args.out_prefix)
    for name, value in report.summary().items():
        print(f"{name} {value:.6g}")
    return 0


def load(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("eval", aliases=["evaluate"], help="Score an estimates file against groundtruth.")
    parser.add_argument("--est", required=True, help="Estimates file written by `solve`.")
    parser.add_argument("--gt", required=True, help="Groundtruth file written by `simulate`.")
    parser.add_argument("--out-prefix", required=True, help="Prefix of the CSV files to write.")
    parser.set_defaults(handler=cmd_evaluate)
