"""Variables, Gaussian factors and the max-mixture multi-hypothesis landmark factor.

Every residual has the form L log(z o inverse(h(X))) with L the upper Cholesky
factor of the information matrix (L^T L = information). Jacobians are taken
with respect to the left perturbation x <- exp(delta) o x of each variable.

The per-factor functions evaluate one factor at a time. `StackedGraph` holds
the same factors as flat arrays and is what the solver iterates on.
"""
from __future__ import annotations

import enum
import logging
import math
import typing as t
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field
from functools import cached_property
from functools import singledispatch

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial.transform import Rotation

from mhslam.config import Config
from mhslam.errors import InvalidInputError
from mhslam.errors import MissingVariableError
from mhslam.errors import ValidationError
from mhslam.pose_algebra import Pose3
from mhslam.pose_algebra import adjoint
from mhslam.pose_algebra import adjoint_batch
from mhslam.pose_algebra import compose
from mhslam.pose_algebra import exp
from mhslam.pose_algebra import exp_batch
from mhslam.pose_algebra import inverse
from mhslam.pose_algebra import log as pose_log
from mhslam.pose_algebra import log_batch
from mhslam.pose_algebra import relative_object_pose
from mhslam.pose_algebra import se3_right_jacobian_inverse
from mhslam.pose_algebra import se3_right_jacobian_inverse_batch
from mhslam.pose_algebra import stack_poses

log = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]

DIM = 6


class VariableKind(enum.IntEnum):
    ROBOT = 0
    LANDMARK = 1


@dataclass(frozen=True, order=True)
class VariableKey:
    kind: VariableKind
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise InvalidInputError(f"variable index must be nonnegative, got {self.index}")

    @classmethod
    def robot(cls, index: int) -> VariableKey:
        return cls(VariableKind.ROBOT, index)

    @classmethod
    def landmark(cls, index: int) -> VariableKey:
        return cls(VariableKind.LANDMARK, index)

    @property
    def is_robot(self) -> bool:
        return self.kind is VariableKind.ROBOT

    def __str__(self) -> str:
        return f"{'x' if self.is_robot else 'l'}{self.index}"


class GraphValues(Mapping[VariableKey, Pose3]):
    """Insertion-ordered assignment of poses to variables; never mutated after construction."""

    def __init__(self, poses: Mapping[VariableKey, Pose3] | t.Iterable[tuple[VariableKey, Pose3]] = ()) -> None:
        self._poses: dict[VariableKey, Pose3] = dict(poses)

    def __getitem__(self, key: VariableKey) -> Pose3:
        try:
            return self._poses[key]
        except KeyError:
            raise MissingVariableError(key) from None

    def __iter__(self) -> t.Iterator[VariableKey]:
        return iter(self._poses)

    def __len__(self) -> int:
        return len(self._poses)

    def __repr__(self) -> str:
        return f"GraphValues({len(self)} variables)"

    def updated(self, poses: Mapping[VariableKey, Pose3]) -> GraphValues:
        merged = dict(self._poses)
        merged.update(poses)
        return GraphValues(merged)

    def retract(self, ordering: t.Sequence[VariableKey], delta: Vector) -> GraphValues:
        """Apply x <- exp(delta_k) o x to each variable in `ordering`."""
        merged = dict(self._poses)
        for i, key in enumerate(ordering):
            merged[key] = compose(exp(delta[DIM * i : DIM * (i + 1)]), self[key])
        return GraphValues(merged)


def sqrt_information(information: Matrix) -> Matrix:
    """Upper factor L with L^T L = information; rejects non-symmetric or indefinite input."""
    info = np.array(information, dtype=np.float64).reshape(DIM, DIM)
    if not np.all(np.isfinite(info)):
        raise ValidationError("information matrix has non-finite entries")
    if np.max(np.abs(info - info.T)) > 1e-9 * max(1.0, float(np.max(np.abs(info)))):
        raise ValidationError("information matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise ValidationError("information matrix is not positive-definite") from None
    upper: Matrix = lower.T.copy()
    upper.flags.writeable = False
    return upper


def information_from_sigmas(sigma_rot: float, sigma_trans: float, floor: float | None = None) -> Matrix:
    """Diagonal information in [rot | trans] ordering; sigmas below the floor are clamped."""
    lo = Config.SIGMA_FLOOR if floor is None else floor
    sr, st = max(sigma_rot, lo), max(sigma_trans, lo)
    return np.diag([1.0 / sr**2] * 3 + [1.0 / st**2] * 3)


def _frozen_information(information: Matrix) -> Matrix:
    info = np.array(information, dtype=np.float64).reshape(DIM, DIM)
    info.flags.writeable = False
    return info


@dataclass(frozen=True, eq=False)
class PriorFactor:
    key: VariableKey
    prior: Pose3
    information: Matrix

    def __post_init__(self) -> None:
        object.__setattr__(self, "information", _frozen_information(self.information))
        _ = self.sqrt_information

    @property
    def keys(self) -> tuple[VariableKey, ...]:
        return (self.key,)

    @cached_property
    def sqrt_information(self) -> Matrix:
        return sqrt_information(self.information)


@dataclass(frozen=True, eq=False)
class OdometryFactor:
    key_from: VariableKey
    key_to: VariableKey
    measurement: Pose3
    information: Matrix

    def __post_init__(self) -> None:
        if not (self.key_from.is_robot and self.key_to.is_robot):
            raise InvalidInputError("odometry factors connect robot poses only")
        if self.key_from == self.key_to:
            raise InvalidInputError(f"odometry factor from {self.key_from} to itself")
        object.__setattr__(self, "information", _frozen_information(self.information))
        _ = self.sqrt_information

    @property
    def keys(self) -> tuple[VariableKey, ...]:
        return (self.key_from, self.key_to)

    @cached_property
    def sqrt_information(self) -> Matrix:
        return sqrt_information(self.information)


def _check_landmark_keys(robot_key: VariableKey, landmark_key: VariableKey) -> None:
    if not robot_key.is_robot or landmark_key.is_robot:
        raise InvalidInputError(f"landmark factor needs (robot, landmark) keys, got ({robot_key}, {landmark_key})")


@dataclass(frozen=True, eq=False)
class LandmarkFactor:
    """Single-Gaussian object-in-camera measurement."""

    robot_key: VariableKey
    landmark_key: VariableKey
    measurement: Pose3
    information: Matrix

    def __post_init__(self) -> None:
        _check_landmark_keys(self.robot_key, self.landmark_key)
        object.__setattr__(self, "information", _frozen_information(self.information))
        _ = self.sqrt_information

    @property
    def keys(self) -> tuple[VariableKey, ...]:
        return (self.robot_key, self.landmark_key)

    @cached_property
    def sqrt_information(self) -> Matrix:
        return sqrt_information(self.information)


@dataclass(frozen=True, eq=False)
class MaxMixtureFactor:
    """N object-in-camera hypotheses sharing one information matrix.

    Weights are normalized on construction and default to 1/N.
    """

    robot_key: VariableKey
    landmark_key: VariableKey
    measurements: tuple[Pose3, ...]
    information: Matrix
    weights: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        _check_landmark_keys(self.robot_key, self.landmark_key)
        measurements = tuple(self.measurements)
        if not measurements:
            raise InvalidInputError("a max-mixture factor needs at least one component")
        raw = tuple(float(w) for w in self.weights) or (1.0,) * len(measurements)
        if len(raw) != len(measurements):
            raise InvalidInputError(f"{len(measurements)} components but {len(raw)} weights")
        total = math.fsum(raw)
        if any(w < 0.0 or not math.isfinite(w) for w in raw) or total <= 0.0:
            raise InvalidInputError(f"mixture weights {raw} must be nonnegative with a positive sum")
        object.__setattr__(self, "measurements", measurements)
        object.__setattr__(self, "weights", tuple(w / total for w in raw))
        object.__setattr__(self, "information", _frozen_information(self.information))
        _ = self.sqrt_information

    def __len__(self) -> int:
        return len(self.measurements)

    @property
    def keys(self) -> tuple[VariableKey, ...]:
        return (self.robot_key, self.landmark_key)

    @cached_property
    def sqrt_information(self) -> Matrix:
        return sqrt_information(self.information)

    @cached_property
    def offsets(self) -> tuple[float, ...]:
        """-log w_j relative to the heaviest component; all zero for uniform weights."""
        top = math.log(max(self.weights))
        return tuple(top - math.log(w) if w > 0.0 else math.inf for w in self.weights)

    @cached_property
    def normalization_constant(self) -> float:
        """Terms of the mixture negative log-likelihood shared by every component."""
        _, logdet = np.linalg.slogdet(self.information)
        return -math.log(max(self.weights)) + 0.5 * DIM * math.log(2.0 * math.pi) - 0.5 * float(logdet)


Factor = t.Union[PriorFactor, OdometryFactor, LandmarkFactor, MaxMixtureFactor]


@dataclass(frozen=True, eq=False)
class Linearization:
    keys: tuple[VariableKey, ...]
    jacobians: tuple[Matrix, ...]
    residual: Vector
    offset: float = 0.0
    component: int | None = None

    @property
    def error(self) -> float:
        return half_squared_norm(self.residual) + self.offset


class FactorGraph:
    """Factors in insertion order; the order fixes the solver's summation order."""

    def __init__(self, factors: t.Iterable[Factor] = ()) -> None:
        self._factors: list[Factor] = []
        self.extend(factors)

    def add(self, factor: Factor) -> None:
        if not isinstance(factor, (PriorFactor, OdometryFactor, LandmarkFactor, MaxMixtureFactor)):
            raise InvalidInputError(f"unsupported factor type {type(factor).__name__}")
        self._factors.append(factor)

    def extend(self, factors: t.Iterable[Factor]) -> None:
        for factor in factors:
            self.add(factor)

    def __iter__(self) -> t.Iterator[Factor]:
        return iter(self._factors)

    def __len__(self) -> int:
        return len(self._factors)

    def __getitem__(self, index: int) -> Factor:
        return self._factors[index]

    def copy(self) -> FactorGraph:
        return FactorGraph(self._factors)

    @property
    def factors(self) -> tuple[Factor, ...]:
        return tuple(self._factors)

    @property
    def priors(self) -> list[PriorFactor]:
        return [f for f in self._factors if isinstance(f, PriorFactor)]

    @property
    def max_mixture_factors(self) -> list[MaxMixtureFactor]:
        return [f for f in self._factors if isinstance(f, MaxMixtureFactor)]

    def keys(self) -> list[VariableKey]:
        """Variables in order of first appearance."""
        return list(dict.fromkeys(key for factor in self._factors for key in factor.keys))


def half_squared_norm(r: Vector) -> float:
    return 0.5 * float(r @ r)


# residuals


def _relative_error(z: Pose3, x_from: Pose3, x_to: Pose3) -> Vector:
    return pose_log(compose(z, inverse(relative_object_pose(x_from, x_to))))


def _relative_linearization(sqrt_info: Matrix, z: Pose3, x_from: Pose3, x_to: Pose3) -> tuple[Vector, Matrix, Matrix]:
    """Whitened residual and Jacobians of L log(z o inverse(inverse(x_from) o x_to))."""
    e = _relative_error(z, x_from, x_to)
    j_from = sqrt_info @ (se3_right_jacobian_inverse(e) @ adjoint(inverse(x_from)))
    return sqrt_info @ e, j_from, -j_from


def residual_prior(f: PriorFactor, v: GraphValues) -> Vector:
    return f.sqrt_information @ pose_log(compose(f.prior, inverse(v[f.key])))


def residual_odometry(f: OdometryFactor, v: GraphValues) -> Vector:
    return f.sqrt_information @ _relative_error(f.measurement, v[f.key_from], v[f.key_to])


def residual_landmark(f: LandmarkFactor, v: GraphValues) -> Vector:
    return f.sqrt_information @ _relative_error(f.measurement, v[f.robot_key], v[f.landmark_key])


def residual_component(f: MaxMixtureFactor, j: int, v: GraphValues) -> Vector:
    if not 0 <= j < len(f):
        raise InvalidInputError(f"component {j} out of range for a {len(f)}-component factor")
    return f.sqrt_information @ _relative_error(f.measurements[j], v[f.robot_key], v[f.landmark_key])


def component_residuals(f: MaxMixtureFactor, v: GraphValues) -> list[Vector]:
    h_inv = inverse(relative_object_pose(v[f.robot_key], v[f.landmark_key]))
    return [f.sqrt_information @ pose_log(compose(z, h_inv)) for z in f.measurements]


def component_costs(f: MaxMixtureFactor, v: GraphValues) -> list[float]:
    return [half_squared_norm(r) + off for r, off in zip(component_residuals(f, v), f.offsets)]


def select_component(f: MaxMixtureFactor, v: GraphValues) -> int:
    """Most likely component: argmin_j 1/2 ||r_j||^2 - log w_j, lowest index on ties."""
    return int(np.argmin(component_costs(f, v)))


def residual_active(f: MaxMixtureFactor, v: GraphValues) -> tuple[int, Vector, float]:
    residuals = component_residuals(f, v)
    costs = [half_squared_norm(r) + off for r, off in zip(residuals, f.offsets)]
    j = int(np.argmin(costs))
    return j, residuals[j], f.offsets[j]


def negative_log_likelihood(f: MaxMixtureFactor, v: GraphValues) -> float:
    """-log max_j w_j N(r_j; 0, Sigma), including the constants the solver drops."""
    return min(component_costs(f, v)) + f.normalization_constant


def whitened_residual(factor: Factor, v: GraphValues, component: int | None = None) -> Vector:
    if isinstance(factor, PriorFactor):
        return residual_prior(factor, v)
    if isinstance(factor, OdometryFactor):
        return residual_odometry(factor, v)
    if isinstance(factor, LandmarkFactor):
        return residual_landmark(factor, v)
    if component is None:
        return residual_active(factor, v)[1]
    return residual_component(factor, component, v)


# linearization


@singledispatch
def linearize(factor: t.Any, v: GraphValues, component: int | None = None) -> Linearization:
    raise InvalidInputError(f"cannot linearize {type(factor).__name__}")


@linearize.register
def _(factor: PriorFactor, v: GraphValues, component: int | None = None) -> Linearization:
    e = pose_log(compose(factor.prior, inverse(v[factor.key])))
    sqrt_info = factor.sqrt_information
    jac = -(sqrt_info @ se3_right_jacobian_inverse(e))
    return Linearization(factor.keys, (jac,), sqrt_info @ e)


@linearize.register
def _(factor: OdometryFactor, v: GraphValues, component: int | None = None) -> Linearization:
    r, j_from, j_to = _relative_linearization(
        factor.sqrt_information, factor.measurement, v[factor.key_from], v[factor.key_to]
    )
    return Linearization(factor.keys, (j_from, j_to), r)


@linearize.register
def _(factor: LandmarkFactor, v: GraphValues, component: int | None = None) -> Linearization:
    r, j_robot, j_landmark = _relative_linearization(
        factor.sqrt_information, factor.measurement, v[factor.robot_key], v[factor.landmark_key]
    )
    return Linearization(factor.keys, (j_robot, j_landmark), r, 0.0)


@linearize.register
def _(factor: MaxMixtureFactor, v: GraphValues, component: int | None = None) -> Linearization:
    """Linearize the active component only; `component` pins a previously selected one."""
    j = select_component(factor, v) if component is None else component
    r, j_robot, j_landmark = _relative_linearization(
        factor.sqrt_information, factor.measurements[j], v[factor.robot_key], v[factor.landmark_key]
    )
    return Linearization(factor.keys, (j_robot, j_landmark), r, factor.offsets[j], j)


def factor_error(factor: Factor, v: GraphValues) -> float:
    """1/2 ||r||^2 plus the weight offset, reselecting the component of max-mixture factors."""
    if isinstance(factor, MaxMixtureFactor):
        return min(component_costs(factor, v))
    return half_squared_norm(whitened_residual(factor, v))


def total_error(graph: FactorGraph, v: GraphValues) -> float:
    total = 0.0
    for factor in graph:
        total += factor_error(factor, v)
    return total


def numerical_jacobians(
    factor: Factor, v: GraphValues, step: float = 1e-6, component: int | None = None
) -> tuple[Matrix, ...]:
    """Central differences of the whitened residual under left perturbation of each variable."""
    if isinstance(factor, MaxMixtureFactor) and component is None:
        component = select_component(factor, v)
    blocks = []
    for key in factor.keys:
        jac = np.zeros((DIM, DIM))
        for k in range(DIM):
            delta = np.zeros(DIM)
            delta[k] = step
            plus = v.updated({key: compose(exp(delta), v[key])})
            minus = v.updated({key: compose(exp(-delta), v[key])})
            jac[:, k] = (whitened_residual(factor, plus, component) - whitened_residual(factor, minus, component)) / (
                2.0 * step
            )
        blocks.append(jac)
    return tuple(blocks)


# stacked layout


@dataclass(frozen=True, eq=False)
class StackedEvaluation:
    """Costs and component selection of every factor at one assignment.

    `rows` holds the active row of each relative factor; the error and residual
    arrays are restricted to those rows.
    """

    error: float
    costs: Vector
    active: tuple[int, ...]
    rows: npt.NDArray[np.intp]
    relative_errors: Matrix
    relative_residuals: Matrix
    prior_errors: Matrix
    prior_residuals: Matrix


@dataclass(frozen=True, eq=False)
class _Arrays:
    from_idx: npt.NDArray[np.intp]
    to_idx: npt.NDArray[np.intp]
    z_rot: Rotation | None
    z_trans: Matrix
    rel_sqrt: npt.NDArray[np.float64]
    offsets: Vector
    row_term: npt.NDArray[np.intp]
    term_start: npt.NDArray[np.intp]
    term_factor: npt.NDArray[np.intp]
    term_mixture: npt.NDArray[np.bool_]
    prior_idx: npt.NDArray[np.intp]
    prior_rot: Rotation | None
    prior_trans: Matrix
    prior_sqrt: npt.NDArray[np.float64]
    prior_factor: npt.NDArray[np.intp]


def _pose_error_batch(z_rot: Rotation, z_trans: Matrix, h_rot: Rotation, h_trans: Matrix) -> Matrix:
    """log(z o inverse(h)) row by row."""
    e_rot = z_rot * h_rot.inv()
    return log_batch(e_rot, z_trans - e_rot.apply(h_trans))


class StackedGraph:
    """A factor graph flattened into arrays with one row per measurement.

    Odometry and landmark factors contribute one relative row, a max-mixture
    factor one row per component. Variables are indexed in order of first
    appearance, the same order as `FactorGraph.keys`.
    """

    def __init__(self, factors: t.Iterable[Factor] = ()) -> None:
        self.index: dict[VariableKey, int] = {}
        self._factors: list[Factor] = []
        self._rel: list[tuple[int, int, Pose3, Matrix, float, int]] = []
        self._terms: list[tuple[int, int, bool]] = []
        self._priors: list[tuple[int, Pose3, Matrix, int]] = []
        self._cache: _Arrays | None = None
        self.extend(factors)

    def __len__(self) -> int:
        return len(self._factors)

    def __contains__(self, key: object) -> bool:
        return key in self.index

    def keys(self) -> list[VariableKey]:
        return list(self.index)

    @property
    def factors(self) -> tuple[Factor, ...]:
        return tuple(self._factors)

    def extend(self, factors: t.Iterable[Factor]) -> None:
        for factor in factors:
            if not isinstance(factor, (PriorFactor, OdometryFactor, LandmarkFactor, MaxMixtureFactor)):
                raise InvalidInputError(f"unsupported factor type {type(factor).__name__}")
            position = len(self._factors)
            self._factors.append(factor)
            self._cache = None
            ids = [self.index.setdefault(key, len(self.index)) for key in factor.keys]
            if isinstance(factor, PriorFactor):
                self._priors.append((ids[0], factor.prior, factor.sqrt_information, position))
                continue
            if isinstance(factor, MaxMixtureFactor):
                measurements, offsets = factor.measurements, factor.offsets
            else:
                measurements, offsets = (factor.measurement,), (0.0,)
            term = len(self._terms)
            self._terms.append((len(self._rel), position, isinstance(factor, MaxMixtureFactor)))
            for z, offset in zip(measurements, offsets):
                self._rel.append((ids[0], ids[1], z, factor.sqrt_information, offset, term))

    def _arrays(self) -> _Arrays:
        if self._cache is not None:
            return self._cache
        rel, priors, terms = self._rel, self._priors, self._terms
        z_rot = stack_poses([r[2] for r in rel])[0] if rel else None
        prior_rot = stack_poses([p[1] for p in priors])[0] if priors else None
        self._cache = _Arrays(
            from_idx=np.array([r[0] for r in rel], dtype=np.intp),
            to_idx=np.array([r[1] for r in rel], dtype=np.intp),
            z_rot=z_rot,
            z_trans=np.array([r[2].translation for r in rel], dtype=np.float64).reshape(-1, 3),
            rel_sqrt=np.array([r[3] for r in rel], dtype=np.float64).reshape(-1, DIM, DIM),
            offsets=np.array([r[4] for r in rel], dtype=np.float64),
            row_term=np.array([r[5] for r in rel], dtype=np.intp),
            term_start=np.array([s[0] for s in terms], dtype=np.intp),
            term_factor=np.array([s[1] for s in terms], dtype=np.intp),
            term_mixture=np.array([s[2] for s in terms], dtype=bool),
            prior_idx=np.array([p[0] for p in priors], dtype=np.intp),
            prior_rot=prior_rot,
            prior_trans=np.array([p[1].translation for p in priors], dtype=np.float64).reshape(-1, 3),
            prior_sqrt=np.array([p[2] for p in priors], dtype=np.float64).reshape(-1, DIM, DIM),
            prior_factor=np.array([p[3] for p in priors], dtype=np.intp),
        )
        return self._cache

    def stack_values(self, values: Mapping[VariableKey, Pose3]) -> tuple[Rotation, Matrix]:
        for key in self.index:
            if key not in values:
                raise MissingVariableError(key)
        return stack_poses([values[key] for key in self.index])

    def evaluate(self, rot: Rotation, trans: Matrix) -> StackedEvaluation:
        """Error of every factor with each max-mixture factor at its cheapest component."""
        a = self._arrays()
        costs = np.zeros(len(self._factors))
        rows = np.zeros(0, dtype=np.intp)
        rel_e = rel_r = np.zeros((0, DIM))
        active: tuple[int, ...] = ()
        if a.z_rot is not None:
            h_from = rot[a.from_idx].inv()
            h_rot = h_from * rot[a.to_idx]
            h_trans = h_from.apply(trans[a.to_idx] - trans[a.from_idx])
            e = _pose_error_batch(a.z_rot, a.z_trans, h_rot, h_trans)
            r = np.einsum("nij,nj->ni", a.rel_sqrt, e)
            row_cost = 0.5 * np.einsum("ni,ni->n", r, r) + a.offsets
            term_min = np.minimum.reduceat(row_cost, a.term_start)
            # first row reaching its term's minimum, so ties go to the lowest component
            hits = np.flatnonzero(row_cost == term_min[a.row_term])
            _, first = np.unique(a.row_term[hits], return_index=True)
            rows = hits[first]
            rel_e, rel_r = e[rows], r[rows]
            costs[a.term_factor] = term_min
            components = rows - a.term_start
            active = tuple(int(c) for c in components[a.term_mixture])
        prior_e = prior_r = np.zeros((0, DIM))
        if a.prior_rot is not None:
            prior_e = _pose_error_batch(a.prior_rot, a.prior_trans, rot[a.prior_idx], trans[a.prior_idx])
            prior_r = np.einsum("nij,nj->ni", a.prior_sqrt, prior_e)
            costs[a.prior_factor] = 0.5 * np.einsum("ni,ni->n", prior_r, prior_r)
        return StackedEvaluation(
            error=math.fsum(costs.tolist()),
            costs=costs,
            active=active,
            rows=rows,
            relative_errors=rel_e,
            relative_residuals=rel_r,
            prior_errors=prior_e,
            prior_residuals=prior_r,
        )

    def normal_equations(
        self, rot: Rotation, trans: Matrix, evaluation: StackedEvaluation
    ) -> tuple[sp.csc_matrix, Vector]:
        """Gauss-Newton system J^T J and J^T r with each max-mixture factor pinned to its active row."""
        a = self._arrays()
        n = len(self.index)
        g = np.zeros((n, DIM))
        block_i: list[npt.NDArray[np.intp]] = []
        block_j: list[npt.NDArray[np.intp]] = []
        blocks: list[npt.NDArray[np.float64]] = []
        rows = evaluation.rows
        if len(rows):
            fi, ti = a.from_idx[rows], a.to_idx[rows]
            inv_from = rot[fi].inv()
            ad = adjoint_batch(inv_from, -inv_from.apply(trans[fi]))
            j_from = a.rel_sqrt[rows] @ se3_right_jacobian_inverse_batch(evaluation.relative_errors) @ ad
            j_t = np.swapaxes(j_from, 1, 2)
            hess = j_t @ j_from
            grad = np.einsum("nij,nj->ni", j_t, evaluation.relative_residuals)
            block_i += [fi, ti, fi, ti]
            block_j += [fi, ti, ti, fi]
            blocks += [hess, hess, -hess, -hess]
            np.add.at(g, fi, grad)
            np.add.at(g, ti, -grad)
        if len(a.prior_idx):
            jac = -(a.prior_sqrt @ se3_right_jacobian_inverse_batch(evaluation.prior_errors))
            j_t = np.swapaxes(jac, 1, 2)
            block_i.append(a.prior_idx)
            block_j.append(a.prior_idx)
            blocks.append(j_t @ jac)
            np.add.at(g, a.prior_idx, np.einsum("nij,nj->ni", j_t, evaluation.prior_residuals))
        bi, bj = np.concatenate(block_i), np.concatenate(block_j)
        offsets = np.arange(DIM)
        row_ids = np.broadcast_to((DIM * bi)[:, None, None] + offsets[None, :, None], (len(bi), DIM, DIM))
        col_ids = np.broadcast_to((DIM * bj)[:, None, None] + offsets[None, None, :], (len(bj), DIM, DIM))
        hessian = sp.coo_matrix(
            (np.concatenate(blocks).reshape(-1), (row_ids.reshape(-1), col_ids.reshape(-1))),
            shape=(DIM * n, DIM * n),
        ).tocsc()
        return hessian, g.reshape(-1)

    def unanchored(self) -> VariableKey | None:
        """First variable of a connected group that no prior anchors, if any."""
        a = self._arrays()
        n = len(self.index)
        adjacency = sp.coo_matrix((np.ones(len(a.from_idx)), (a.from_idx, a.to_idx)), shape=(n, n))
        count, labels = connected_components(adjacency, directed=False)
        anchored = np.zeros(count, dtype=bool)
        anchored[labels[a.prior_idx]] = True
        keys = self.keys()
        for label in range(count):
            if not anchored[label]:
                return keys[int(np.flatnonzero(labels == label)[0])]
        return None


def retract_stacked(rot: Rotation, trans: Matrix, delta: Vector) -> tuple[Rotation, Matrix]:
    """x <- exp(delta_k) o x for every stacked variable."""
    d_rot, d_trans = exp_batch(np.asarray(delta).reshape(-1, DIM))
    return d_rot * rot, d_rot.apply(trans) + d_trans


__all__ = [
    "DIM",
    "Factor",
    "FactorGraph",
    "GraphValues",
    "LandmarkFactor",
    "Linearization",
    "MaxMixtureFactor",
    "OdometryFactor",
    "PriorFactor",
    "StackedEvaluation",
    "StackedGraph",
    "VariableKey",
    "VariableKind",
    "component_costs",
    "component_residuals",
    "factor_error",
    "half_squared_norm",
    "information_from_sigmas",
    "linearize",
    "negative_log_likelihood",
    "numerical_jacobians",
    "residual_active",
    "residual_component",
    "residual_landmark",
    "residual_odometry",
    "residual_prior",
    "retract_stacked",
    "select_component",
    "sqrt_information",
    "total_error",
    "whitened_residual",
]
