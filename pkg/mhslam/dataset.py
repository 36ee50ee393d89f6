"""Text formats: g2o-style datasets with a multi-hypothesis edge, estimate traces, groundtruth and metric inputs.

Files store quaternions as (qx, qy, qz, qw); everything inside the package uses
(w, x, y, z). Landmark ids are offset by LANDMARK_ID_OFFSET.
"""
from __future__ import annotations

import logging
import typing as t

import numpy as np

from mhslam.errors import DatasetParseError
from mhslam.errors import InvalidInputError
from mhslam.errors import MhslamError
from mhslam.errors import ValidationError
from mhslam.factor_graph import DIM
from mhslam.factor_graph import Factor
from mhslam.factor_graph import FactorGraph
from mhslam.factor_graph import GraphValues
from mhslam.factor_graph import LandmarkFactor
from mhslam.factor_graph import MaxMixtureFactor
from mhslam.factor_graph import OdometryFactor
from mhslam.factor_graph import VariableKey
from mhslam.pose_algebra import Pose3
from mhslam.pose_algebra import quat_normalize_hemisphere
from mhslam.shape_metrics import ObjectModel

log = logging.getLogger(__name__)

VERTEX_TAG = "VERTEX_SE3:QUAT"
EDGE_TAG = "EDGE_SE3:QUAT"
MM_EDGE_TAG = "MM_EDGE_SE3:QUAT"
STEP_TAG = "STEP"
LANDMARK_ID_OFFSET = 100000

POSE_FIELDS = 7
INFO_FIELDS = DIM * (DIM + 1) // 2
_UPPER = np.triu_indices(DIM)


def key_from_id(node_id: int) -> VariableKey:
    if node_id < 0:
        raise InvalidInputError(f"node ids must be nonnegative, got {node_id}")
    if node_id >= LANDMARK_ID_OFFSET:
        return VariableKey.landmark(node_id - LANDMARK_ID_OFFSET)
    return VariableKey.robot(node_id)


def id_from_key(key: VariableKey) -> int:
    if key.is_robot:
        if key.index >= LANDMARK_ID_OFFSET:
            raise InvalidInputError(f"robot index {key.index} collides with the landmark id range")
        return key.index
    return LANDMARK_ID_OFFSET + key.index


def fmt(value: float) -> str:
    return "%.17g" % value


def format_pose(pose: Pose3) -> str:
    return " ".join(fmt(v) for v in (*pose.translation, *pose.rotation.to_xyzw()))


def format_information(information: np.ndarray) -> str:
    return " ".join(fmt(v) for v in np.asarray(information)[_UPPER])


def _pose(values: t.Sequence[float]) -> Pose3:
    x, y, z, qx, qy, qz, qw = values
    return Pose3(quat_normalize_hemisphere((qw, qx, qy, qz)), (x, y, z))


def _information(values: t.Sequence[float]) -> np.ndarray:
    info = np.zeros((DIM, DIM))
    info[_UPPER] = values
    return info + info.T - np.diag(info.diagonal())


class _Line:
    """Token cursor over one record that reports failures with the line number."""

    def __init__(self, line_no: int, tokens: list[str]) -> None:
        self.line_no = line_no
        self.tag = tokens[0]
        self._tokens = tokens[1:]
        self._pos = 0

    def fail(self, message: str) -> DatasetParseError:
        return DatasetParseError(self.line_no, f"{self.tag}: {message}")

    def _take(self, count: int) -> list[str]:
        if self._pos + count > len(self._tokens):
            raise self.fail(f"expected at least {self._pos + count} fields, got {len(self._tokens)}")
        out = self._tokens[self._pos : self._pos + count]
        self._pos += count
        return out

    def ints(self, count: int) -> list[int]:
        try:
            return [int(tok) for tok in self._take(count)]
        except ValueError as e:
            raise self.fail(f"bad integer ({e})") from None

    def floats(self, count: int) -> list[float]:
        try:
            return [float(tok) for tok in self._take(count)]
        except ValueError as e:
            raise self.fail(f"bad number ({e})") from None

    def key(self) -> VariableKey:
        try:
            return key_from_id(self.ints(1)[0])
        except InvalidInputError as e:
            raise self.fail(str(e)) from None

    def pose(self) -> Pose3:
        try:
            return _pose(self.floats(POSE_FIELDS))
        except InvalidInputError as e:
            raise self.fail(str(e)) from None

    def information(self) -> np.ndarray:
        return _information(self.floats(INFO_FIELDS))

    def done(self) -> None:
        if self._pos != len(self._tokens):
            raise self.fail(f"expected {self._pos} fields, got {len(self._tokens)}")


def _records(text: str) -> t.Iterator[_Line]:
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield _Line(line_no, tokens)


def _edge(rec: _Line) -> Factor:
    key_i, key_j = rec.key(), rec.key()
    z, info = rec.pose(), rec.information()
    rec.done()
    try:
        if key_i.is_robot and key_j.is_robot:
            return OdometryFactor(key_i, key_j, z, info)
        if key_i.is_robot:
            return LandmarkFactor(key_i, key_j, z, info)
    except InvalidInputError as e:
        raise rec.fail(str(e)) from None
    raise rec.fail(f"edges must start at a robot pose, got {key_i} -> {key_j}")


def _mm_edge(rec: _Line) -> MaxMixtureFactor:
    robot, landmark = rec.key(), rec.key()
    (count,) = rec.ints(1)
    if count < 1:
        raise rec.fail(f"hypothesis count must be at least 1, got {count}")
    hypotheses = tuple(rec.pose() for _ in range(count))
    info = rec.information()
    rec.done()
    try:
        return MaxMixtureFactor(robot, landmark, hypotheses, info)
    except InvalidInputError as e:
        raise rec.fail(str(e)) from None


def parse_dataset(text: str) -> tuple[FactorGraph, GraphValues]:
    """One variable or factor per record, in file order."""
    graph = FactorGraph()
    values: dict[VariableKey, Pose3] = {}
    for rec in _records(text):
        try:
            if rec.tag == VERTEX_TAG:
                key = rec.key()
                pose = rec.pose()
                rec.done()
                if key in values:
                    raise rec.fail(f"duplicate vertex {id_from_key(key)}")
                values[key] = pose
            elif rec.tag == EDGE_TAG:
                graph.add(_edge(rec))
            elif rec.tag == MM_EDGE_TAG:
                graph.add(_mm_edge(rec))
            else:
                raise DatasetParseError(rec.line_no, f"unknown record tag {rec.tag!r}")
        except ValidationError as e:
            raise ValidationError(f"line {rec.line_no}: {e}") from None
    log.debug("parsed %d vertices and %d factors", len(values), len(graph))
    return graph, GraphValues(values)


def _edge_line(factor: Factor) -> str:
    if isinstance(factor, (OdometryFactor, LandmarkFactor)):
        ids = " ".join(str(id_from_key(k)) for k in factor.keys)
        return f"{EDGE_TAG} {ids} {format_pose(factor.measurement)} {format_information(factor.information)}"
    if isinstance(factor, MaxMixtureFactor):
        if len(set(factor.weights)) > 1:
            raise InvalidInputError("the dataset format only carries uniformly weighted mixtures")
        poses = " ".join(format_pose(z) for z in factor.measurements)
        return (
            f"{MM_EDGE_TAG} {id_from_key(factor.robot_key)} {id_from_key(factor.landmark_key)} {len(factor)} "
            f"{poses} {format_information(factor.information)}"
        )
    raise InvalidInputError(f"{type(factor).__name__} has no dataset record; priors are added by the solver")


def serialize_dataset(graph: FactorGraph, values: t.Mapping[VariableKey, Pose3]) -> str:
    """Vertices in insertion order, then factors in insertion order."""
    lines = [f"{VERTEX_TAG} {id_from_key(key)} {format_pose(pose)}" for key, pose in values.items()]
    lines.extend(_edge_line(factor) for factor in graph)
    return "".join(line + "\n" for line in lines)


def format_groundtruth(values: t.Mapping[VariableKey, Pose3]) -> str:
    return serialize_dataset(FactorGraph(), values)


def parse_groundtruth(text: str) -> GraphValues:
    graph, values = parse_dataset(text)
    if len(graph):
        raise InvalidInputError("groundtruth files hold vertices only")
    return values


def format_estimates(estimates: t.Sequence[t.Mapping[VariableKey, Pose3]]) -> str:
    """One STEP block per timestep; earlier blocks hold the latest robot pose and every landmark."""
    lines = []
    last = len(estimates) - 1
    for step, values in enumerate(estimates):
        lines.append(f"{STEP_TAG} {step}")
        robots = [k for k in values if k.is_robot]
        current = max(robots) if robots else None
        for key, pose in values.items():
            if step == last or not key.is_robot or key == current:
                lines.append(f"{VERTEX_TAG} {id_from_key(key)} {format_pose(pose)}")
    return "".join(line + "\n" for line in lines)


def parse_estimates(text: str) -> list[GraphValues]:
    steps: list[dict[VariableKey, Pose3]] = []
    for rec in _records(text):
        if rec.tag == STEP_TAG:
            (index,) = rec.ints(1)
            rec.done()
            if index != len(steps):
                raise rec.fail(f"expected step {len(steps)}, got {index}")
            steps.append({})
        elif rec.tag == VERTEX_TAG:
            if not steps:
                raise rec.fail(f"vertex before the first {STEP_TAG} line")
            key = rec.key()
            steps[-1][key] = rec.pose()
            rec.done()
        else:
            raise DatasetParseError(rec.line_no, f"unknown record tag {rec.tag!r}")
    return [GraphValues(step) for step in steps]


def read_xyz(text: str, id: int = 0, name: str = "model") -> ObjectModel:
    """Model points from `x y z` lines; any extra columns (normals, colors) are ignored."""
    points = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) < 3:
            raise DatasetParseError(line_no, f"expected x y z, got {len(tokens)} fields")
        try:
            points.append([float(tok) for tok in tokens[:3]])
        except ValueError as e:
            raise DatasetParseError(line_no, f"bad coordinate ({e})") from None
    return ObjectModel(id, name, np.array(points, dtype=np.float64).reshape(-1, 3))


def parse_pose_pairs(text: str) -> list[tuple[Pose3, Pose3]]:
    """Estimated then groundtruth pose per line, each as tx ty tz qx qy qz qw."""
    pairs = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) != 2 * POSE_FIELDS:
            raise DatasetParseError(line_no, f"expected {2 * POSE_FIELDS} numbers, got {len(tokens)}")
        try:
            numbers = [float(tok) for tok in tokens]
            pairs.append((_pose(numbers[:POSE_FIELDS]), _pose(numbers[POSE_FIELDS:])))
        except ValueError as e:
            raise DatasetParseError(line_no, f"bad number ({e})") from None
        except MhslamError as e:
            raise DatasetParseError(line_no, str(e)) from None
    return pairs


def format_pose_pairs(pairs: t.Iterable[tuple[Pose3, Pose3]]) -> str:
    return "".join(f"{format_pose(est)} {format_pose(gt)}\n" for est, gt in pairs)


__all__ = [
    "EDGE_TAG",
    "LANDMARK_ID_OFFSET",
    "MM_EDGE_TAG",
    "STEP_TAG",
    "VERTEX_TAG",
    "format_estimates",
    "format_groundtruth",
    "format_pose",
    "format_pose_pairs",
    "id_from_key",
    "key_from_id",
    "parse_dataset",
    "parse_estimates",
    "parse_groundtruth",
    "parse_pose_pairs",
    "read_xyz",
    "serialize_dataset",
]
