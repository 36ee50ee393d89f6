from __future__ import annotations

import argparse
from pathlib import Path

from mhslam.dataset import parse_pose_pairs
from mhslam.dataset import read_xyz
from mhslam.errors import InvalidInputError
from mhslam.shape_metrics import DEFAULT_AUC_THRESHOLD
from mhslam.shape_metrics import Metric
from mhslam.shape_metrics import auc
from mhslam.shape_metrics import metric_error


def cmd_metrics(args: argparse.Namespace) -> int:
    model = read_xyz(Path(args.model).read_text(), name=Path(args.model).stem)
    pairs = parse_pose_pairs(Path(args.pairs).read_text())
    if not pairs:
        raise InvalidInputError(f"{args.pairs} holds no pose pairs")
    errors = [metric_error(est, gt, model, args.metric) for est, gt in pairs]
    for i, error in enumerate(errors):
        print(f"{i} {error:.17g}")
    print(f"AUC {auc(errors, args.auc_threshold)}")
    return 0


def load(subparsers: argparse._SubParsersAction[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("metrics", help="ADD / ADD-S errors and AUC for pose pairs.")
    parser.add_argument("--model", required=True, help="Model points, one `x y z` per line.")
    parser.add_argument("--pairs", required=True, help="Pose pairs, estimate then groundtruth per line.")
    parser.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.ADD.value)
    parser.add_argument("--auc-threshold", type=float, default=DEFAULT_AUC_THRESHOLD)
    parser.set_defaults(handler=cmd_metrics)
