"""Backend strategies, per-run error reports and multi-seed strategy comparison."""
from __future__ import annotations

import enum
import logging
import math
import typing as t
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from mhslam.ambiguity_sim import SimConfig
from mhslam.ambiguity_sim import SimOutput
from mhslam.ambiguity_sim import run_simulation
from mhslam.ambiguity_sim import sim_checksum
from mhslam.config import Config
from mhslam.errors import InvalidInputError
from mhslam.errors import ValidationError
from mhslam.factor_graph import Factor
from mhslam.factor_graph import FactorGraph
from mhslam.factor_graph import GraphValues
from mhslam.factor_graph import MaxMixtureFactor
from mhslam.factor_graph import PriorFactor
from mhslam.factor_graph import VariableKey
from mhslam.factor_graph import information_from_sigmas
from mhslam.pose_algebra import Pose3
from mhslam.pose_algebra import chordal_distance
from mhslam.pose_algebra import quat_normalize_hemisphere
from mhslam.pose_algebra import rotation_angular_distance
from mhslam.shape_metrics import HypothesisSet
from mhslam.solver import SolverConfig
from mhslam.solver import Timestep
from mhslam.solver import incremental_solve

log = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


class StrategyKind(str, enum.Enum):
    MAX_MIXTURE = "maxmix"
    AVERAGE = "average"
    RANDOM_SELECT = "random"


def baseline_average(h: HypothesisSet) -> Pose3:
    """Weighted mean translation and chordal-L2 mean rotation of the hypotheses.

    The rotation maximizes sum_j w_j <q, q_j>^2. When the top eigenvalue is
    repeated, the weighted sum of hemisphere-aligned quaternions is projected
    onto its eigenspace.
    """
    weights = np.asarray(h.weights, dtype=np.float64)
    weights = weights / weights.sum()
    translation = weights @ np.array([p.translation for p in h.hypotheses])
    quats = np.array([quat_normalize_hemisphere(p.rotation.as_array()).as_array() for p in h.hypotheses])
    accumulator = (quats * weights[:, None]).T @ quats
    values, vectors = np.linalg.eigh(accumulator)
    top = values[-1]
    space = vectors[:, values >= top - 1e-12 * max(1.0, abs(top))]
    q = space[:, -1]
    if space.shape[1] > 1:
        projected = space @ (space.T @ (weights @ quats))
        if np.linalg.norm(projected) > 1e-12:
            q = projected
    return Pose3(quat_normalize_hemisphere(q / np.linalg.norm(q)), translation)


def baseline_random(h: HypothesisSet, rng: np.random.Generator) -> Pose3:
    return h.hypotheses[int(rng.integers(len(h)))]


@dataclass
class ErrorReport:
    rotation_errors_deg: list[float] = field(default_factory=list)
    translation_errors: list[float] = field(default_factory=list)
    landmark_mean_chordal: list[float] = field(default_factory=list)
    final_landmark_errors: dict[int, float] = field(default_factory=dict)
    trajectory_rmse: float = 0.0

    @staticmethod
    def running_mean(values: t.Sequence[float]) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return np.cumsum(v) / np.arange(1, v.size + 1)

    @property
    def rotation_running(self) -> np.ndarray:
        return self.running_mean(self.rotation_errors_deg)

    @property
    def translation_running(self) -> np.ndarray:
        return self.running_mean(self.translation_errors)

    @property
    def final_mean_landmark_error(self) -> float:
        if not self.final_landmark_errors:
            return 0.0
        return float(np.mean(list(self.final_landmark_errors.values())))

    def running_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "frame": np.arange(len(self.rotation_errors_deg)),
                "rot_err_deg_running": self.rotation_running,
                "trans_err_m_running": self.translation_running,
            }
        )

    def landmark_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "timestep": np.arange(len(self.landmark_mean_chordal)),
                "mean_landmark_chordal": np.asarray(self.landmark_mean_chordal, dtype=np.float64),
            }
        )

    def summary(self) -> dict[str, float]:
        running_rot = self.rotation_running
        running_trans = self.translation_running
        return {
            "final_mean_landmark_chordal": self.final_mean_landmark_error,
            "trajectory_rmse": self.trajectory_rmse,
            "final_rot_err_deg_running": float(running_rot[-1]) if running_rot.size else 0.0,
            "final_trans_err_m_running": float(running_trans[-1]) if running_trans.size else 0.0,
        }


def evaluate_run(
    estimates: t.Sequence[t.Mapping[VariableKey, Pose3]], gt: SimOutput | t.Mapping[VariableKey, Pose3]
) -> ErrorReport:
    """Score per-step estimates against groundtruth in the shared world frame, without alignment.

    Step t is scored on its latest robot pose and on the mean chordal error of
    the landmarks estimated so far.
    """
    truth = gt.groundtruth() if isinstance(gt, SimOutput) else gt
    report = ErrorReport()
    if not estimates:
        return report
    for step in estimates:
        for key in step:
            if key not in truth:
                raise InvalidInputError(f"estimate has {key} but groundtruth does not")
    final = estimates[-1]
    missing = [k for k in truth if k.is_robot and k not in final]
    if missing:
        raise InvalidInputError(f"groundtruth robot pose {missing[0]} has no final estimate")

    for step in estimates:
        robots = [k for k in step if k.is_robot]
        if robots:
            current = max(robots)
            report.rotation_errors_deg.append(math.degrees(rotation_angular_distance(step[current], truth[current])))
            report.translation_errors.append(
                float(np.linalg.norm(step[current].translation - truth[current].translation))
            )
        landmarks = [chordal_distance(step[k], truth[k]) for k in step if not k.is_robot]
        report.landmark_mean_chordal.append(float(np.mean(landmarks)) if landmarks else 0.0)

    report.final_landmark_errors = {
        k.index: chordal_distance(final[k], truth[k]) for k in sorted(final) if not k.is_robot
    }
    squared = [float(np.sum((final[k].translation - truth[k].translation) ** 2)) for k in sorted(final) if k.is_robot]
    report.trajectory_rmse = math.sqrt(float(np.mean(squared))) if squared else 0.0
    return report


def apply_strategy(factor: MaxMixtureFactor, strategy: StrategyKind, rng: np.random.Generator) -> MaxMixtureFactor:
    """Baselines collapse the hypotheses to one pose before the factor enters the graph."""
    if strategy is StrategyKind.MAX_MIXTURE:
        return factor
    h = HypothesisSet(factor.landmark_key.index, factor.measurements, factor.weights)
    pose = baseline_average(h) if strategy is StrategyKind.AVERAGE else baseline_random(h, rng)
    return MaxMixtureFactor(factor.robot_key, factor.landmark_key, (pose,), factor.information)


def collapse_graph(graph: FactorGraph, strategy: StrategyKind | str, seed: int = 0) -> FactorGraph:
    strategy = StrategyKind(strategy)
    rng = np.random.default_rng(seed)
    return FactorGraph(
        apply_strategy(f, strategy, rng) if isinstance(f, MaxMixtureFactor) else f for f in graph
    )


def build_stream(sim: SimOutput, strategy: StrategyKind | str, seed: int = 0) -> list[Timestep]:
    """One timestep per frame; the first carries a gauge prior at the groundtruth start pose."""
    strategy = StrategyKind(strategy)
    rng = np.random.default_rng(seed)
    info = sim.config.measurement_information
    prior_info = information_from_sigmas(Config.PRIOR_SIGMA_ROT, Config.PRIOR_SIGMA_TRANS)
    seen: set[VariableKey] = set()
    stream = []
    for frame, observed in enumerate(sim.measurements):
        robot = VariableKey.robot(frame)
        factors: list[Factor] = []
        if frame == 0:
            factors.append(PriorFactor(robot, sim.trajectory[0], prior_info))
        else:
            factors.append(sim.odometry[frame - 1])
        new = [robot]
        for object_id, hyps in observed:
            mixture = MaxMixtureFactor(robot, VariableKey.landmark(object_id), hyps.hypotheses, info, hyps.weights)
            factor = apply_strategy(mixture, strategy, rng)
            factors.append(factor)
            if factor.landmark_key not in seen:
                seen.add(factor.landmark_key)
                new.append(factor.landmark_key)
        stream.append(Timestep(tuple(new), tuple(factors)))
    return stream


def run_strategy(
    sim: SimOutput, strategy: StrategyKind | str, seed: int = 0, solver_config: SolverConfig | None = None
) -> tuple[list[GraphValues], ErrorReport]:
    strategy = StrategyKind(strategy)
    estimates = incremental_solve(build_stream(sim, strategy, seed), solver_config)
    report = evaluate_run(estimates, sim)
    log.info(
        "%s seed %d: landmark error %.4f, trajectory rmse %.4f",
        strategy.value,
        sim.config.seed,
        report.final_mean_landmark_error,
        report.trajectory_rmse,
    )
    return estimates, report


@dataclass
class ComparisonTable:
    reports: dict[tuple[StrategyKind, int], ErrorReport] = field(default_factory=dict)
    checksums: dict[int, str] = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return sorted({seed for _, seed in self.reports})

    def runs(self) -> pd.DataFrame:
        rows = [
            {"strategy": strategy.value, "seed": seed, **report.summary()}
            for (strategy, seed), report in self.reports.items()
        ]
        return pd.DataFrame(rows)

    def summary(self) -> pd.DataFrame:
        """Median and quartiles of each final metric per strategy."""
        runs = self.runs()
        metrics = [c for c in runs.columns if c not in ("strategy", "seed")]
        groups = list(runs.groupby("strategy", sort=False))
        rows = []
        for metric in metrics:
            for strategy, frame in groups:
                series = frame[metric]
                rows.append(
                    {
                        "strategy": strategy,
                        "metric": metric,
                        "median": float(series.median()),
                        "q1": float(series.quantile(0.25)),
                        "q3": float(series.quantile(0.75)),
                    }
                )
        return pd.DataFrame(rows)

    def median(self, strategy: StrategyKind | str, metric: str) -> float:
        runs = self.runs()
        return float(runs.loc[runs["strategy"] == StrategyKind(strategy).value, metric].median())

    def write(self, prefix: str | Path) -> list[Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        written = []
        for (strategy, seed), report in self.reports.items():
            stem = f"{prefix.name}_{strategy.value}_seed{seed}"
            written.append(write_csv(report.running_frame(), prefix.with_name(f"{stem}_running.csv")))
            written.append(write_csv(report.landmark_frame(), prefix.with_name(f"{stem}_landmarks.csv")))
        written.append(write_csv(self.runs(), prefix.with_name(f"{prefix.name}_runs.csv")))
        written.append(write_csv(self.summary(), prefix.with_name(f"{prefix.name}_summary.csv")))
        return written


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    log.info("wrote %s", path)
    return path


def write_report(report: ErrorReport, prefix: str | Path) -> list[Path]:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    return [
        write_csv(report.running_frame(), prefix.with_name(f"{prefix.name}_running.csv")),
        write_csv(report.landmark_frame(), prefix.with_name(f"{prefix.name}_landmarks.csv")),
    ]


def _run_job(
    config: SimConfig, strategy: StrategyKind, expected_checksum: str, solver_config: SolverConfig | None
) -> ErrorReport:
    sim = run_simulation(config)
    if sim_checksum(sim) != expected_checksum:
        raise ValidationError(f"seed {config.seed} produced different measurements for {strategy.value}")
    _, report = run_strategy(sim, strategy, config.seed, solver_config)
    return report


def compare_strategies(
    config: SimConfig,
    seeds: t.Sequence[int],
    solver_config: SolverConfig | None = None,
    workers: int | None = None,
    strategies: t.Sequence[StrategyKind] = tuple(StrategyKind),
) -> ComparisonTable:
    """Run every strategy on the same simulated measurements for each seed."""
    if not seeds:
        raise InvalidInputError("compare_strategies needs at least one seed")
    workers = Config.WORKERS if workers is None else workers
    table = ComparisonTable()
    jobs = []
    for seed in seeds:
        seeded = replace(config, seed=seed)
        table.checksums[seed] = sim_checksum(run_simulation(seeded))
        jobs.extend((seeded, strategy, table.checksums[seed], solver_config) for strategy in strategies)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_job, *zip(*jobs)))
    else:
        reports = [_run_job(*job) for job in jobs]

    for (seeded, strategy, _, _), report in zip(jobs, reports):
        table.reports[(strategy, seeded.seed)] = report
    log.info("compared %d strategies over %d seeds", len(strategies), len(seeds))
    return table


__all__ = [
    "CSV_FLOAT_FORMAT",
    "ComparisonTable",
    "ErrorReport",
    "StrategyKind",
    "baseline_average",
    "baseline_random",
    "apply_strategy",
    "build_stream",
    "collapse_graph",
    "compare_strategies",
    "evaluate_run",
    "run_strategy",
    "write_csv",
    "write_report",
]
