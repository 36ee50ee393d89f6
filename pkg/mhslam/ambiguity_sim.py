"""Seeded generator of an object-SLAM run with ambiguous multi-hypothesis object pose measurements.

A camera circles an inner loop facing outward at a ring of objects, moves to an
outer loop and circles it facing inward. Every visible object yields one set of
N pose hypotheses per frame; symmetric objects contribute symmetry-transformed
copies of the true pose, and any slot may be replaced by a spurious pose.

Random draws happen in a fixed order from one generator seeded with
`SimConfig.seed`: odometry noise for every consecutive pose pair, then per frame,
per visible object (by id) and per hypothesis slot.
"""
from __future__ import annotations

import hashlib
import logging
import math
import typing as t
from dataclasses import dataclass
from dataclasses import field

import msgpack
import numpy as np

from mhslam.errors import InvalidInputError
from mhslam.factor_graph import FactorGraph
from mhslam.factor_graph import GraphValues
from mhslam.factor_graph import MaxMixtureFactor
from mhslam.factor_graph import OdometryFactor
from mhslam.factor_graph import VariableKey
from mhslam.factor_graph import information_from_sigmas
from mhslam.pose_algebra import Pose3
from mhslam.pose_algebra import UnitQuaternion
from mhslam.pose_algebra import between
from mhslam.pose_algebra import compose
from mhslam.pose_algebra import exp
from mhslam.pose_algebra import interpolate
from mhslam.pose_algebra import log as pose_log
from mhslam.pose_algebra import random_rotation
from mhslam.pose_algebra import relative_object_pose
from mhslam.pose_algebra import rotation_about
from mhslam.shape_metrics import HypothesisSet
from mhslam.shape_metrics import ObjectModel
from mhslam.shape_metrics import box_model
from mhslam.shape_metrics import clamp_model
from mhslam.shape_metrics import cylinder_model
from mhslam.shape_metrics import mug_model

log = logging.getLogger(__name__)

Axis = t.Tuple[float, float, float]
Z_AXIS: Axis = (0.0, 0.0, 1.0)


def _unit_axis(axis: t.Sequence[float], what: str) -> Axis:
    a = tuple(float(v) for v in axis)
    if len(a) != 3 or abs(math.sqrt(sum(v * v for v in a)) - 1.0) > 1e-9:
        raise InvalidInputError(f"{what} must be a unit 3-vector, got {axis}")
    return t.cast(Axis, a)


@dataclass(frozen=True)
class NoSymmetry:
    kind: t.ClassVar[str] = "none"

    def transforms(self) -> tuple[Pose3, ...]:
        return ()


@dataclass(frozen=True)
class DiscreteRotations:
    axis: Axis
    order: int
    kind: t.ClassVar[str] = "discrete"

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", _unit_axis(self.axis, "symmetry axis"))
        if self.order < 2:
            raise InvalidInputError(f"rotation order must be at least 2, got {self.order}")

    def transforms(self) -> tuple[Pose3, ...]:
        return tuple(rotation_about(self.axis, 2.0 * math.pi * k / self.order) for k in range(1, self.order))


@dataclass(frozen=True)
class MirrorPair:
    """Two quasi-mirror views; the partner pose is the half-turn about the plane normal.

    A reflection is not a rigid motion, so the partner only coincides with the
    object when its model is also closed under that half-turn (a box, say). For a
    model with just the mirror plane, such as `clamp_model`, the partner is a
    distinct pose with nonzero ADD-S: a confusable view, not an equivalent one.
    """

    normal: Axis
    kind: t.ClassVar[str] = "mirror"

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", _unit_axis(self.normal, "mirror normal"))

    def transforms(self) -> tuple[Pose3, ...]:
        return (rotation_about(self.normal, math.pi),)


@dataclass(frozen=True)
class AxisContinuous:
    """Continuous symmetry about an axis, sampled at `sample_count` evenly spaced angles."""

    axis: Axis
    sample_count: int
    kind: t.ClassVar[str] = "continuous"

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", _unit_axis(self.axis, "symmetry axis"))
        if self.sample_count < 2:
            raise InvalidInputError(f"sample count must be at least 2, got {self.sample_count}")

    def transforms(self) -> tuple[Pose3, ...]:
        n = self.sample_count
        return tuple(rotation_about(self.axis, 2.0 * math.pi * k / n) for k in range(1, n))


SymmetryDescriptor = t.Union[NoSymmetry, DiscreteRotations, MirrorPair, AxisContinuous]


@dataclass(frozen=True, eq=False)
class SimObject:
    id: int
    pose_in_world: Pose3
    model: ObjectModel
    symmetry: SymmetryDescriptor = field(default_factory=NoSymmetry)

    @property
    def key(self) -> VariableKey:
        return VariableKey.landmark(self.id)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    frame_count: int = 400
    inner_radius: float = 2.5
    outer_radius: float = 6.0
    inner_fraction: float = 0.5
    object_ring_radius: float = 4.0
    odometry_sigma_rot: float = 0.01
    odometry_sigma_trans: float = 0.02
    measurement_sigma_rot: float = 0.05
    measurement_sigma_trans: float = 0.02
    hypothesis_count: int = 5
    p_cov: float = 0.8
    p_spur: float = 0.2
    max_range: float = 5.0
    half_angle: float = 0.7
    max_step_trans: float = 0.5
    max_step_rot: float = 0.25
    objects: tuple[SimObject, ...] | None = None

    def __post_init__(self) -> None:
        if self.frame_count < 2:
            raise InvalidInputError(f"frame_count must be at least 2, got {self.frame_count}")
        if self.hypothesis_count < 1:
            raise InvalidInputError("hypothesis_count must be at least 1")
        for name in ("p_cov", "p_spur", "inner_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        for name in ("inner_radius", "outer_radius", "object_ring_radius", "max_step_trans", "max_step_rot"):
            if not getattr(self, name) > 0.0:
                raise InvalidInputError(f"{name} must be positive, got {getattr(self, name)}")
        for name in (
            "odometry_sigma_rot",
            "odometry_sigma_trans",
            "measurement_sigma_rot",
            "measurement_sigma_trans",
            "max_range",
            "half_angle",
        ):
            if getattr(self, name) < 0.0:
                raise InvalidInputError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.objects is not None:
            ids = [obj.id for obj in self.objects]
            if len(set(ids)) != len(ids):
                raise InvalidInputError(f"object ids must be unique, got {ids}")
            object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def odometry_information(self) -> np.ndarray:
        return information_from_sigmas(self.odometry_sigma_rot, self.odometry_sigma_trans)

    @property
    def measurement_information(self) -> np.ndarray:
        return information_from_sigmas(self.measurement_sigma_rot, self.measurement_sigma_trans)


@dataclass(frozen=True, eq=False)
class SimOutput:
    config: SimConfig
    trajectory: tuple[Pose3, ...]
    objects: tuple[SimObject, ...]
    odometry: tuple[OdometryFactor, ...]
    measurements: tuple[tuple[tuple[int, HypothesisSet], ...], ...]
    visibility: tuple[tuple[int, ...], ...]

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)

    def groundtruth(self) -> GraphValues:
        poses: dict[VariableKey, Pose3] = {VariableKey.robot(i): p for i, p in enumerate(self.trajectory)}
        poses.update((obj.key, obj.pose_in_world) for obj in self.objects)
        return GraphValues(poses)

    def model_for(self, object_id: int) -> ObjectModel:
        for obj in self.objects:
            if obj.id == object_id:
                return obj.model
        raise InvalidInputError(f"no object with id {object_id}")

    def to_graph(self) -> tuple[FactorGraph, GraphValues]:
        """Odometry and multi-hypothesis factors in frame order, with dead-reckoned initial values.

        Landmarks start at their first observation's first hypothesis. No prior is added.
        """
        info = self.config.measurement_information
        graph = FactorGraph()
        initial: dict[VariableKey, Pose3] = {VariableKey.robot(0): self.trajectory[0]}
        for frame, observed in enumerate(self.measurements):
            robot = VariableKey.robot(frame)
            if frame > 0:
                odo = self.odometry[frame - 1]
                graph.add(odo)
                initial[robot] = compose(initial[VariableKey.robot(frame - 1)], odo.measurement)
            for object_id, hyps in observed:
                landmark = VariableKey.landmark(object_id)
                graph.add(MaxMixtureFactor(robot, landmark, hyps.hypotheses, info, hyps.weights))
                if landmark not in initial:
                    initial[landmark] = compose(initial[robot], hyps.hypotheses[0])
        return graph, GraphValues(initial)


def default_objects(ring_radius: float = 4.0) -> tuple[SimObject, ...]:
    """Five objects evenly spaced on a ring around the origin, bearings 18 + 72k degrees."""
    models: list[tuple[ObjectModel, SymmetryDescriptor]] = [
        (box_model(0, "cracker_box", (0.16, 0.06, 0.21)), DiscreteRotations(Z_AXIS, 2)),
        (mug_model(1, "mug", 0.04, 0.09), AxisContinuous(Z_AXIS, 12)),
        (cylinder_model(2, "tuna_fish_can", 0.043, 0.033), AxisContinuous(Z_AXIS, 12)),
        (clamp_model(3, "large_clamp", 0.2, 0.08, 0.03), MirrorPair(Z_AXIS)),
        (mug_model(4, "pitcher_base", 0.09, 0.24, angular_samples=16), NoSymmetry()),
    ]
    objects = []
    for k, (model, symmetry) in enumerate(models):
        bearing = math.radians(18.0 + 72.0 * k)
        position = ring_radius * np.array([math.cos(bearing), math.sin(bearing), 0.0])
        pose = compose(Pose3.from_translation(position), rotation_about(Z_AXIS, bearing))
        objects.append(SimObject(model.id, pose, model, symmetry))
    return tuple(objects)


def generate_world(config: SimConfig) -> list[SimObject]:
    if config.objects is not None:
        return list(config.objects)
    return list(default_objects(config.object_ring_radius))


def _circle_pose(radius: float, bearing: float, outward: bool) -> Pose3:
    """Camera on a circle in the z = 0 plane, optical axis radial, image y pointing down."""
    c, s = math.cos(bearing), math.sin(bearing)
    if outward:
        rot = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    else:
        rot = np.array([[-s, 0.0, -c], [c, 0.0, -s], [0.0, -1.0, 0.0]])
    return Pose3.from_rt(rot, (radius * c, radius * s, 0.0))


def _circle(radius: float, count: int, outward: bool) -> list[Pose3]:
    return [_circle_pose(radius, 2.0 * math.pi * k / count, outward) for k in range(count)]


def _transition(a: Pose3, b: Pose3, max_trans: float, max_rot: float) -> list[Pose3]:
    """Intermediate poses strictly between a and b so no step exceeds the caps.

    Steps are equal increments of one twist; a step moves the camera by at most
    the norm of the twist's translational part divided by the step count.
    """
    delta = pose_log(between(a, b))
    steps = max(
        math.ceil(float(np.linalg.norm(delta[3:])) / max_trans),
        math.ceil(float(np.linalg.norm(delta[:3])) / max_rot),
        1,
    )
    return [interpolate(a, b, k / steps) for k in range(1, steps)]


def generate_trajectory(config: SimConfig) -> list[Pose3]:
    """Inner circle facing outward, a capped transition, then the outer circle facing inward.

    Circle frames are spaced evenly in bearing, so the step cap only limits the
    transition. When too few frames remain for the transition and one outer
    frame, the transition is skipped.
    """
    if config.frame_count < 2:
        raise InvalidInputError(f"frame_count must be at least 2, got {config.frame_count}")
    n_inner = min(config.frame_count, round(config.frame_count * config.inner_fraction))
    remaining = config.frame_count - n_inner
    inner = _circle(config.inner_radius, n_inner, outward=True) if n_inner else []
    if not remaining:
        return inner
    if not inner:
        return _circle(config.outer_radius, remaining, outward=False)

    bridge = _transition(
        inner[-1], _circle_pose(config.outer_radius, 0.0, outward=False), config.max_step_trans, config.max_step_rot
    )
    if len(bridge) >= remaining:
        bridge = []
    outer = _circle(config.outer_radius, remaining - len(bridge), outward=False)
    return inner + bridge + outer


def _perturb(pose: Pose3, sigma_rot: float, sigma_trans: float, rng: np.random.Generator) -> Pose3:
    eps = np.concatenate([rng.normal(0.0, sigma_rot, 3), rng.normal(0.0, sigma_trans, 3)])
    if not np.any(eps):
        return pose
    return compose(exp(eps), pose)


def simulate_odometry(
    gt_traj: t.Sequence[Pose3], config: SimConfig, rng: np.random.Generator
) -> list[OdometryFactor]:
    if len(gt_traj) < 2:
        raise InvalidInputError("odometry needs at least two poses")
    info = config.odometry_information
    factors = []
    for i, (a, b) in enumerate(zip(gt_traj, gt_traj[1:])):
        z = _perturb(between(a, b), config.odometry_sigma_rot, config.odometry_sigma_trans, rng)
        factors.append(OdometryFactor(VariableKey.robot(i), VariableKey.robot(i + 1), z, info))
    return factors


def _spurious_pose(true_relative: Pose3, rng: np.random.Generator) -> Pose3:
    """Uniform rotation; translation uniform in a ball of twice the object's distance."""
    rotation = random_rotation(rng)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    radius = 2.0 * float(np.linalg.norm(true_relative.translation)) * rng.random() ** (1.0 / 3.0)
    return Pose3(rotation, radius * direction)


def generate_hypotheses(
    true_relative: Pose3,
    symmetry: SymmetryDescriptor,
    config: SimConfig,
    rng: np.random.Generator,
    object_id: int = 0,
) -> HypothesisSet:
    """One detection's hypothesis set, slots shuffled, uniform weights."""
    n = config.hypothesis_count
    sr, st = config.measurement_sigma_rot, config.measurement_sigma_trans
    transforms = symmetry.transforms()
    covered = bool(rng.random() < config.p_cov)
    offset = int(rng.integers(len(transforms))) if transforms else 0

    slots: list[Pose3] = []
    if covered:
        slots.append(_perturb(true_relative, sr, st, rng))
    used = 0
    while len(slots) < n:
        if rng.random() < config.p_spur:
            slots.append(_spurious_pose(true_relative, rng))
        elif transforms:
            element = transforms[(offset + used) % len(transforms)]
            used += 1
            slots.append(_perturb(compose(true_relative, element), sr, st, rng))
        elif covered:
            slots.append(_perturb(true_relative, sr, st, rng))
        else:
            slots.append(_spurious_pose(true_relative, rng))

    order = rng.permutation(n)
    return HypothesisSet(object_id, tuple(slots[i] for i in order))


def is_visible(camera: Pose3, target: Pose3, config: SimConfig) -> bool:
    """Range and viewing-cone test of the target origin against the camera's optical axis."""
    p = relative_object_pose(camera, target).translation
    distance = float(np.linalg.norm(p))
    if distance == 0.0 or distance > config.max_range:
        return False
    return math.acos(max(-1.0, min(1.0, float(p[2]) / distance))) <= config.half_angle


def run_simulation(config: SimConfig) -> SimOutput:
    rng = np.random.default_rng(config.seed)
    objects = tuple(sorted(generate_world(config), key=lambda o: o.id))
    trajectory = tuple(generate_trajectory(config))
    odometry = tuple(simulate_odometry(trajectory, config, rng))

    measurements = []
    visibility = []
    for camera in trajectory:
        observed = []
        for obj in objects:
            if not is_visible(camera, obj.pose_in_world, config):
                continue
            true_relative = relative_object_pose(camera, obj.pose_in_world)
            observed.append((obj.id, generate_hypotheses(true_relative, obj.symmetry, config, rng, obj.id)))
        measurements.append(tuple(observed))
        visibility.append(tuple(object_id for object_id, _ in observed))

    out = SimOutput(config, trajectory, objects, odometry, tuple(measurements), tuple(visibility))
    log.info(
        "simulated seed %d: %d frames, %d objects, %d hypothesis sets",
        config.seed,
        len(trajectory),
        len(objects),
        sum(len(m) for m in measurements),
    )
    return out


def _pose_record(pose: Pose3) -> list[float]:
    return [float(v) for v in pose.translation] + list(pose.rotation.as_tuple())


def pack_sim_output(sim: SimOutput) -> bytes:
    """Canonical msgpack encoding of everything a backend consumes."""
    payload = {
        "seed": sim.config.seed,
        "objects": [
            [obj.id, obj.model.name, obj.symmetry.kind, _pose_record(obj.pose_in_world)] for obj in sim.objects
        ],
        "trajectory": [_pose_record(p) for p in sim.trajectory],
        "odometry": [
            [f.key_from.index, f.key_to.index, _pose_record(f.measurement), f.information.reshape(-1).tolist()]
            for f in sim.odometry
        ],
        "measurements": [
            [[object_id, [_pose_record(h) for h in hyps.hypotheses], list(hyps.weights)] for object_id, hyps in frame]
            for frame in sim.measurements
        ],
    }
    return t.cast(bytes, msgpack.packb(payload, use_bin_type=True))


def unpack_trajectory(data: bytes) -> list[Pose3]:
    payload = msgpack.unpackb(data, raw=False)
    return [Pose3(UnitQuaternion(*rec[3:]), rec[:3]) for rec in payload["trajectory"]]


def sim_checksum(sim: SimOutput) -> str:
    return hashlib.sha256(pack_sim_output(sim)).hexdigest()


__all__ = [
    "AxisContinuous",
    "DiscreteRotations",
    "MirrorPair",
    "NoSymmetry",
    "SimConfig",
    "SimObject",
    "SimOutput",
    "SymmetryDescriptor",
    "default_objects",
    "generate_hypotheses",
    "generate_trajectory",
    "generate_world",
    "is_visible",
    "pack_sim_output",
    "run_simulation",
    "sim_checksum",
    "simulate_odometry",
    "unpack_trajectory",
]
