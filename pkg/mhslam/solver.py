"""Levenberg-Marquardt over the pose manifold with max-mixture reselection, and its incremental driver."""
from __future__ import annotations

import logging
import typing as t
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from mhslam.errors import GaugeError
from mhslam.errors import InvalidInputError
from mhslam.factor_graph import Factor
from mhslam.factor_graph import FactorGraph
from mhslam.factor_graph import GraphValues
from mhslam.factor_graph import LandmarkFactor
from mhslam.factor_graph import MaxMixtureFactor
from mhslam.factor_graph import OdometryFactor
from mhslam.factor_graph import PriorFactor
from mhslam.factor_graph import StackedGraph
from mhslam.factor_graph import VariableKey
from mhslam.factor_graph import factor_error
from mhslam.factor_graph import half_squared_norm
from mhslam.factor_graph import retract_stacked
from mhslam.pose_algebra import Pose3
from mhslam.pose_algebra import compose
from mhslam.pose_algebra import identity
from mhslam.pose_algebra import inverse
from mhslam.pose_algebra import log as pose_log
from mhslam.pose_algebra import unstack_poses

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.5
    convergence_tol_abs: float = 1e-8
    convergence_tol_rel: float = 1e-10
    max_inner_retries: int = 10

    def __post_init__(self) -> None:
        for name in (
            "max_iterations",
            "initial_damping",
            "damping_up",
            "damping_down",
            "convergence_tol_abs",
            "convergence_tol_rel",
            "max_inner_retries",
        ):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"solver setting {name} must be positive, got {getattr(self, name)}")
        if self.convergence_tol_abs >= 1.0 or self.convergence_tol_rel >= 1.0:
            raise InvalidInputError("convergence tolerances must be below 1")


@dataclass
class SolveStats:
    iterations: int = 0
    final_error: float = 0.0
    error_history: list[float] = field(default_factory=list)
    active_history: list[tuple[int, ...]] = field(default_factory=list)
    final_active: tuple[int, ...] = ()
    converged: bool = False


def check_gauge(graph: FactorGraph | StackedGraph) -> None:
    """Every connected group of variables needs at least one prior to anchor it."""
    stacked = graph if isinstance(graph, StackedGraph) else StackedGraph(graph)
    first = stacked.unanchored()
    if first is not None:
        raise GaugeError(f"variables connected to {first} are not anchored by any prior")


def _solve_damped(hessian: sp.csc_matrix, g: np.ndarray, damping: float) -> np.ndarray | None:
    damped = (hessian + sp.diags(damping * hessian.diagonal(), format="csc")).tocsc()
    try:
        delta = splu(damped, permc_spec="COLAMD").solve(-g)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(delta)):
        return None
    return t.cast(np.ndarray, delta)


def optimize(
    graph: FactorGraph, initial: t.Mapping[VariableKey, Pose3], config: SolverConfig | None = None
) -> tuple[GraphValues, SolveStats]:
    """Minimize the total max-mixture error; variables absent from the graph pass through unchanged."""
    return _optimize_stacked(StackedGraph(graph), initial, config or SolverConfig())


def _optimize_stacked(
    stacked: StackedGraph, initial: t.Mapping[VariableKey, Pose3], config: SolverConfig
) -> tuple[GraphValues, SolveStats]:
    values = GraphValues(initial)
    stats = SolveStats()
    if not len(stacked):
        stats.error_history.append(0.0)
        stats.converged = True
        return values, stats

    keys = stacked.keys()
    rot, trans = stacked.stack_values(values)
    current = stacked.evaluate(rot, trans)
    error = current.error
    stats.error_history.append(error)
    check_gauge(stacked)
    damping = config.initial_damping
    moved = False

    for iteration in range(config.max_iterations):
        stats.iterations = iteration + 1
        if stats.active_history and current.active != stats.active_history[-1]:
            switched = sum(a != b for a, b in zip(current.active, stats.active_history[-1]))
            log.debug("iteration %d: %d mixture factors switched component", iteration, switched)
        stats.active_history.append(current.active)
        hessian, g = stacked.normal_equations(rot, trans, current)

        accepted = False
        solved_any = False
        for _ in range(config.max_inner_retries + 1):
            delta = _solve_damped(hessian, g, damping)
            if delta is None:
                damping *= config.damping_up
                continue
            solved_any = True
            new_rot, new_trans = retract_stacked(rot, trans, delta)
            candidate = stacked.evaluate(new_rot, new_trans)
            if candidate.error < error:
                accepted = True
                break
            damping *= config.damping_up

        if not solved_any and iteration == 0:
            raise GaugeError("normal equations are singular at every damping level")
        if not accepted:
            log.debug("iteration %d: no decrease at damping %.3g, stopping", iteration, damping)
            stats.converged = solved_any
            break

        change = error - candidate.error
        rot, trans, current, error = new_rot, new_trans, candidate, candidate.error
        moved = True
        stats.error_history.append(error)
        damping *= config.damping_down
        log.debug("iteration %d: error %.12g (change %.3g)", iteration, error, change)
        if change < config.convergence_tol_abs or change < config.convergence_tol_rel * error:
            stats.converged = True
            break

    stats.final_error = error
    stats.final_active = current.active
    if moved:
        values = values.updated(dict(zip(keys, unstack_poses(rot, trans))))
    log.debug("optimize finished after %d iterations, error %.12g", stats.iterations, error)
    return values, stats


@dataclass
class Timestep:
    """Variables that first appear at one step, their optional explicit initial values and new factors."""

    variables: tuple[VariableKey, ...] = ()
    factors: tuple[Factor, ...] = ()
    initial: dict[VariableKey, Pose3] = field(default_factory=dict)


def _initialize_robot(key: VariableKey, step: Timestep, values: dict[VariableKey, Pose3]) -> Pose3:
    for factor in step.factors:
        if isinstance(factor, OdometryFactor):
            if factor.key_to == key and factor.key_from in values:
                return compose(values[factor.key_from], factor.measurement)
            if factor.key_from == key and factor.key_to in values:
                return compose(values[factor.key_to], inverse(factor.measurement))
    for factor in step.factors:
        if isinstance(factor, PriorFactor) and factor.key == key:
            return factor.prior
    return identity()


def _observations(key: VariableKey, step: Timestep) -> list[LandmarkFactor | MaxMixtureFactor]:
    return [f for f in step.factors if isinstance(f, (LandmarkFactor, MaxMixtureFactor)) and f.landmark_key == key]


def _initialize_landmark(key: VariableKey, step: Timestep, values: dict[VariableKey, Pose3]) -> Pose3:
    """Lowest-error candidate c o z_j of the first observation, scored over this step's observations."""
    observations = _observations(key, step)
    for factor in step.factors:
        if isinstance(factor, PriorFactor) and factor.key == key:
            return factor.prior
    if not observations:
        return identity()
    first = observations[0]
    hypotheses = first.measurements if isinstance(first, MaxMixtureFactor) else (first.measurement,)
    camera = values.get(first.robot_key)
    if camera is None:
        return compose(identity(), hypotheses[0])
    candidates = [compose(camera, z) for z in hypotheses]
    scored = [f for f in observations if f.robot_key in values]
    costs = []
    for j, candidate in enumerate(candidates):
        trial = GraphValues({**values, key: candidate})
        error = sum(factor_error(f, trial) for f in scored)
        # ties go to the hypothesis that best explains the rest of its own set
        consensus = sum(
            half_squared_norm(first.sqrt_information @ pose_log(compose(z, inverse(hypotheses[j])))) for z in hypotheses
        )
        costs.append((round(error, 9), consensus, j))
    return candidates[min(costs)[2]]


def _only_extends_chain(step: Timestep, stacked: StackedGraph) -> bool:
    """True when each factor is odometry hanging one fresh, otherwise unconstrained pose off the solved graph.

    Such a step cannot move the existing optimum and its new poses are already
    at zero residual after initialization.
    """
    fresh = set(step.variables)
    touched: set[VariableKey] = set()
    for factor in step.factors:
        if not isinstance(factor, OdometryFactor):
            return False
        new = [k for k in factor.keys if k in fresh]
        known = [k for k in factor.keys if k in stacked]
        if len(new) != 1 or len(known) != 1 or new[0] in touched or new[0] in step.initial:
            return False
        touched.add(new[0])
    return True


def incremental_solve(
    stream: t.Iterable[Timestep], config: SolverConfig | None = None
) -> list[GraphValues]:
    """Warm-started batch solve after every timestep; returns the estimate after each one."""
    config = config or SolverConfig()
    stacked = StackedGraph()
    estimate: dict[VariableKey, Pose3] = {}
    results: list[GraphValues] = []
    for t_index, step in enumerate(stream):
        for key in step.variables:
            if key in estimate:
                raise InvalidInputError(f"variable {key} declared twice (timestep {t_index})")
        ordered = sorted(step.variables, key=lambda k: k.kind)
        for key in ordered:
            if key in step.initial:
                estimate[key] = step.initial[key]
            elif key.is_robot:
                estimate[key] = _initialize_robot(key, step, estimate)
            else:
                estimate[key] = _initialize_landmark(key, step, estimate)
        for factor in step.factors:
            missing = [k for k in factor.keys if k not in estimate]
            if missing:
                raise InvalidInputError(f"timestep {t_index} references undeclared variable {missing[0]}")
        skip = _only_extends_chain(step, stacked)
        stacked.extend(step.factors)
        if skip:
            solved = GraphValues(estimate)
            log.debug("timestep %d: nothing new to solve for, %d factors", t_index, len(stacked))
        else:
            solved, stats = _optimize_stacked(stacked, estimate, config)
            estimate = dict(solved)
            log.debug(
                "timestep %d: %d factors, %d iterations, error %.6g",
                t_index,
                len(stacked),
                stats.iterations,
                stats.final_error,
            )
        results.append(solved)
    log.info("incremental solve finished: %d timesteps, %d factors", len(results), len(stacked))
    return results


def stream_from_graph(graph: FactorGraph, initial: t.Mapping[VariableKey, Pose3]) -> list[Timestep]:
    """Split a dataset into one timestep per robot pose, in robot index order.

    A factor lands in the step of the latest robot pose it touches. Robot poses
    reached by odometry and landmarks with an observation are initialized by the
    solver; everything else takes its value from `initial` when present.
    """
    robots = sorted({k for k in graph.keys() if k.is_robot} | {k for k in initial if k.is_robot})
    step_of = {key: i for i, key in enumerate(robots)}
    buckets: list[list[Factor]] = [[] for _ in robots]
    if not robots:
        if len(graph):
            raise InvalidInputError("a dataset with factors needs at least one robot pose")
        return []
    for factor in graph:
        robot_keys = [k for k in factor.keys if k.is_robot]
        buckets[max((step_of[k] for k in robot_keys), default=0)].append(factor)

    seen: set[VariableKey] = set()
    steps = []
    for robot, factors in zip(robots, buckets):
        new = [robot] if robot not in seen else []
        for factor in factors:
            new.extend(k for k in factor.keys if k not in seen and k not in new)
        seen.update(new)
        step = Timestep(tuple(new), tuple(factors))
        for key in new:
            constrained = (
                any(isinstance(f, OdometryFactor) and key in f.keys for f in factors)
                if key.is_robot
                else bool(_observations(key, step))
            )
            if not constrained and key in initial:
                step.initial[key] = initial[key]
        steps.append(step)
    return steps


__all__ = [
    "SolveStats",
    "SolverConfig",
    "Timestep",
    "check_gauge",
    "incremental_solve",
    "optimize",
    "stream_from_graph",
]
