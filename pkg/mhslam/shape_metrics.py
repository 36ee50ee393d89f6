"""ADD / ADD-S pose metrics, winner-takes-all hypothesis scoring and the AUC protocol.

All distances are in meters; the AUC threshold defaults to 10 cm.
"""
from __future__ import annotations

import enum
import logging
import math
import typing as t
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist

from mhslam.config import Config
from mhslam.errors import InvalidInputError
from mhslam.pose_algebra import Pose3

log = logging.getLogger(__name__)

Points = npt.NDArray[np.float64]

DEFAULT_AUC_THRESHOLD = 0.10


class Metric(str, enum.Enum):
    ADD = "add"
    ADDS = "adds"


@dataclass(frozen=True, eq=False)
class ObjectModel:
    id: int
    name: str
    points: Points

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.size == 0:
            raise InvalidInputError(f"object model {self.name!r} has no points")
        pts = pts.reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError(f"object model {self.name!r} has non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def diameter(self) -> float:
        return float(cdist(self.points, self.points).max())

    @property
    def is_discriminative(self) -> bool:
        """At least four points that do not lie on a common plane."""
        if len(self) < 4:
            return False
        centered = self.points - self.points.mean(axis=0)
        return bool(np.linalg.matrix_rank(centered, tol=1e-9) == 3)

    def subsampled(self, max_points: int) -> Points:
        n = len(self)
        if n <= max_points:
            return self.points
        idx = np.linspace(0, n - 1, max_points).round().astype(np.int64)
        return self.points[idx]


@dataclass(frozen=True, eq=False)
class HypothesisSet:
    """N candidate object-in-camera poses from one detection, with mixture weights."""

    object_id: int
    hypotheses: tuple[Pose3, ...]
    weights: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        hyps = tuple(self.hypotheses)
        if not hyps:
            raise InvalidInputError("a hypothesis set needs at least one hypothesis")
        weights = tuple(float(w) for w in self.weights) or tuple(1.0 / len(hyps) for _ in hyps)
        if len(weights) != len(hyps):
            raise InvalidInputError(f"{len(hyps)} hypotheses but {len(weights)} weights")
        if any(w < 0.0 or not math.isfinite(w) for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-9:
            raise InvalidInputError(f"hypothesis weights {weights} must be nonnegative and sum to 1")
        object.__setattr__(self, "hypotheses", hyps)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.hypotheses)


def _check_model(model: ObjectModel) -> None:
    if len(model) == 0:
        raise InvalidInputError(f"object model {model.name!r} has no points")


def add_error(est: Pose3, gt: Pose3, model: ObjectModel) -> float:
    """Mean distance between model points under the estimated and groundtruth poses."""
    _check_model(model)
    diff = est.transform_points(model.points) - gt.transform_points(model.points)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def adds_error(est: Pose3, gt: Pose3, model: ObjectModel, max_points: int | None = None) -> float:
    """Mean distance from each estimated point to its nearest groundtruth point.

    Brute-force nearest neighbours over at most `max_points` uniformly strided
    model points (exact when the model is under the cap).
    """
    _check_model(model)
    cap = Config.ADDS_MAX_POINTS if max_points is None else max_points
    pts = model.subsampled(cap)
    dists = cdist(est.transform_points(pts), gt.transform_points(pts))
    return float(np.mean(dists.min(axis=1)))


def metric_error(est: Pose3, gt: Pose3, model: ObjectModel, metric: Metric | str) -> float:
    if Metric(metric) is Metric.ADD:
        return add_error(est, gt, model)
    return adds_error(est, gt, model)


def hypothesis_errors(hyps: HypothesisSet, gt: Pose3, model: ObjectModel, metric: Metric | str) -> list[float]:
    return [metric_error(h, gt, model, metric) for h in hyps.hypotheses]


def best_hypothesis(
    hyps: HypothesisSet, gt: Pose3, model: ObjectModel, metric: Metric | str = Metric.ADD
) -> tuple[int, float]:
    """Winner-takes-all: the hypothesis with the smallest error, lowest index on ties."""
    errors = hypothesis_errors(hyps, gt, model, metric)
    index = int(np.argmin(errors))
    return index, errors[index]


def auc(errors: t.Sequence[float] | npt.NDArray[np.float64], threshold: float = DEFAULT_AUC_THRESHOLD) -> float:
    """Normalized area under the accuracy-vs-threshold curve on [0, threshold]."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise InvalidInputError("auc needs at least one error value")
    if threshold <= 0.0:
        raise InvalidInputError("auc threshold must be positive")
    if np.any(e < 0.0) or not np.all(np.isfinite(e)):
        raise InvalidInputError("auc errors must be finite and nonnegative")
    return float(np.mean(1.0 - np.minimum(e, threshold) / threshold))


def auc_percent(
    errors: t.Sequence[float] | npt.NDArray[np.float64], threshold: float = DEFAULT_AUC_THRESHOLD
) -> float:
    return 100.0 * auc(errors, threshold)


# synthetic primitives standing in for scanned object meshes


def box_model(id: int, name: str, size: t.Sequence[float], per_edge: int = 5) -> ObjectModel:
    """Points on the surface grid of an axis-aligned box centred at the origin."""
    half = np.asarray(size, dtype=np.float64) / 2.0
    ticks = np.linspace(-1.0, 1.0, per_edge)
    grid = np.array(np.meshgrid(ticks, ticks, ticks, indexing="ij")).reshape(3, -1).T
    surface = grid[np.any(np.abs(grid) == 1.0, axis=1)]
    return ObjectModel(id, name, surface * half)


def cylinder_model(
    id: int, name: str, radius: float, height: float, angular_samples: int = 12, rings: int = 3
) -> ObjectModel:
    """Rings of points on a cylinder about z; closed under rotations by 2*pi/angular_samples."""
    angles = 2.0 * np.pi * np.arange(angular_samples) / angular_samples
    heights = np.linspace(-height / 2.0, height / 2.0, rings)
    pts = [(radius * np.cos(a), radius * np.sin(a), h) for h in heights for a in angles]
    pts.extend([(0.0, 0.0, -height / 2.0), (0.0, 0.0, height / 2.0)])
    return ObjectModel(id, name, np.array(pts))


def mug_model(id: int, name: str, radius: float, height: float, angular_samples: int = 12) -> ObjectModel:
    """A cylinder with a handle on +x; the handle breaks the rotational symmetry."""
    body = cylinder_model(id, name, radius, height, angular_samples).points
    arc = np.linspace(-np.pi / 2.0, np.pi / 2.0, 7)
    handle_r = 0.3 * height
    handle = np.stack([radius + handle_r * np.cos(arc), np.zeros_like(arc), handle_r * np.sin(arc)], axis=1)
    return ObjectModel(id, name, np.vstack([body, handle]))


def clamp_model(id: int, name: str, length: float, width: float, thickness: float) -> ObjectModel:
    """A flat, L-shaped part; mirror images of it differ only in which way the foot points."""
    xs = np.linspace(-length / 2.0, length / 2.0, 7)
    ys = np.linspace(0.0, width, 4)
    bar = [(x, 0.0, z) for x in xs for z in (-thickness / 2.0, thickness / 2.0)]
    foot = [(length / 2.0, y, z) for y in ys[1:] for z in (-thickness / 2.0, thickness / 2.0)]
    return ObjectModel(id, name, np.array(bar + foot))


__all__ = [
    "DEFAULT_AUC_THRESHOLD",
    "HypothesisSet",
    "Metric",
    "ObjectModel",
    "add_error",
    "adds_error",
    "auc",
    "auc_percent",
    "best_hypothesis",
    "box_model",
    "clamp_model",
    "cylinder_model",
    "hypothesis_errors",
    "metric_error",
    "mug_model",
]
