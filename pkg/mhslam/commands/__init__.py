"""Subcommands; every module exposes `load(subparsers)` registering its parser and handler."""
from __future__ import annotations

import argparse
from dataclasses import replace

from mhslam.ambiguity_sim import SimConfig

# flag -> SimConfig field
SIM_FLAGS: dict[str, tuple[str, type]] = {
    "--frames": ("frame_count", int),
    "--n-hyp": ("hypothesis_count", int),
    "--p-cov": ("p_cov", float),
    "--p-spur": ("p_spur", float),
    "--inner-fraction": ("inner_fraction", float),
    "--odom-sigma-rot": ("odometry_sigma_rot", float),
    "--odom-sigma-trans": ("odometry_sigma_trans", float),
    "--meas-sigma-rot": ("measurement_sigma_rot", float),
    "--meas-sigma-trans": ("measurement_sigma_trans", float),
    "--max-range": ("max_range", float),
    "--half-angle": ("half_angle", float),
}


def add_sim_arguments(parser: argparse.ArgumentParser) -> None:
    defaults = SimConfig()
    group = parser.add_argument_group("simulation")
    for flag, (name, kind) in SIM_FLAGS.items():
        group.add_argument(flag, dest=name, type=kind, default=None, help=f"default {getattr(defaults, name)}")


def sim_config_from_args(args: argparse.Namespace, seed: int = 0) -> SimConfig:
    overrides = {name: getattr(args, name) for name, _ in SIM_FLAGS.values() if getattr(args, name) is not None}
    return replace(SimConfig(seed=seed), **overrides)


__all__ = ["add_sim_arguments", "sim_config_from_args"]
