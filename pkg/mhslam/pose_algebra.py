"""Rigid-body arithmetic on SE(3).

Quaternions are stored as (w, x, y, z) and kept in the canonical hemisphere
(w >= 0, ties at w = 0 resolved by the first nonzero vector component being
positive). Twists are 6-vectors ordered [rotation | translation]; every
Jacobian and information matrix in the package uses that ordering.

Rotation arithmetic goes through `scipy.spatial.transform.Rotation`. The
`*_batch` helpers work on stacks of n twists or rotations at once and are what
the solver uses; the single-pose functions are thin wrappers around them.
"""
from __future__ import annotations

import math
import typing as t
from dataclasses import dataclass
from dataclasses import field
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from mhslam.errors import InvalidInputError

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]
Twist = npt.NDArray[np.float64]

QuaternionLike = t.Union["UnitQuaternion", t.Sequence[float], Vector]

SMALL_ANGLE = 1e-6
# the higher-order SE(3) Jacobian coefficients lose precision well above SMALL_ANGLE
SERIES_ANGLE = 1e-3
_UNIT_SQUARED_TOL = 4e-15


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
        if not math.isfinite(n2) or abs(n2 - 1.0) > 1e-9:
            raise InvalidInputError(f"quaternion {self.as_tuple()} is not unit-norm")

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_xyzw(cls, qx: float, qy: float, qz: float, qw: float) -> UnitQuaternion:
        """Build from file order (qx, qy, qz, qw)."""
        return quat_normalize_hemisphere((qw, qx, qy, qz))

    @classmethod
    def from_rotation(cls, rot: Rotation) -> UnitQuaternion:
        qx, qy, qz, qw = rot.as_quat()
        return quat_normalize_hemisphere((qw, qx, qy, qz))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def as_array(self) -> Vector:
        return np.array(self.as_tuple(), dtype=np.float64)

    def to_xyzw(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.w)

    def as_rotation(self) -> Rotation:
        return Rotation.from_quat(self.to_xyzw())

    def conjugate(self) -> UnitQuaternion:
        return quat_normalize_hemisphere((self.w, -self.x, -self.y, -self.z))

    def to_matrix(self) -> Matrix:
        return self.as_rotation().as_matrix()


def _components(q: QuaternionLike) -> tuple[float, float, float, float]:
    if isinstance(q, UnitQuaternion):
        return q.as_tuple()
    w, x, y, z = (float(c) for c in q)
    return w, x, y, z


def _first_nonzero(*values: float) -> float:
    for v in values:
        if v != 0.0:
            return v
    return 0.0


def quat_normalize_hemisphere(q: QuaternionLike) -> UnitQuaternion:
    """Return the unit quaternion with w >= 0 that represents the same rotation as `q`."""
    w, x, y, z = _components(q)
    n2 = w * w + x * x + y * y + z * z
    if not math.isfinite(n2) or n2 == 0.0:
        raise InvalidInputError("cannot normalize a zero-norm or non-finite quaternion")
    if abs(n2 - 1.0) > _UNIT_SQUARED_TOL:
        n = math.sqrt(n2)
        w, x, y, z = w / n, x / n, y / n, z / n
    if w < 0.0 or (w == 0.0 and _first_nonzero(x, y, z) < 0.0):
        w, x, y, z = -w, -x, -y, -z
    # + 0.0 folds negative zeros so antipodal inputs give identical bits
    return UnitQuaternion(w + 0.0, x + 0.0, y + 0.0, z + 0.0)


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    return UnitQuaternion.from_rotation(a.as_rotation() * b.as_rotation())


def quat_from_matrix(rot: Matrix) -> UnitQuaternion:
    return UnitQuaternion.from_rotation(Rotation.from_matrix(np.asarray(rot, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform p -> R p + t."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: Vector = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise InvalidInputError("pose translation must be finite")
        translation.flags.writeable = False
        object.__setattr__(self, "translation", translation)

    @classmethod
    def from_rt(cls, rot: Matrix, translation: t.Sequence[float] | Vector) -> Pose3:
        return cls(quat_from_matrix(rot), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, mat: Matrix) -> Pose3:
        m = np.asarray(mat, dtype=np.float64)
        return cls.from_rt(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, translation: t.Sequence[float] | Vector) -> Pose3:
        return cls(UnitQuaternion.identity(), np.asarray(translation, dtype=np.float64))

    @cached_property
    def rotation_matrix(self) -> Matrix:
        rot = self.rotation.to_matrix()
        rot.flags.writeable = False
        return rot

    def matrix(self) -> Matrix:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation_matrix
        mat[:3, 3] = self.translation
        return mat

    def transform_points(self, points: Matrix) -> Matrix:
        return np.asarray(points, dtype=np.float64) @ self.rotation_matrix.T + self.translation

    def __repr__(self) -> str:
        t_ = ", ".join(f"{v:.6g}" for v in self.translation)
        q_ = ", ".join(f"{v:.6g}" for v in self.rotation.as_tuple())
        return f"Pose3(q=({q_}), t=({t_}))"


def identity() -> Pose3:
    return Pose3()


def stack_poses(poses: t.Sequence[Pose3]) -> tuple[Rotation, Matrix]:
    """Rotations and (n, 3) translations of a non-empty pose sequence."""
    if not poses:
        raise InvalidInputError("cannot stack an empty pose sequence")
    quats = np.array([p.rotation.to_xyzw() for p in poses], dtype=np.float64)
    return Rotation.from_quat(quats), np.array([p.translation for p in poses], dtype=np.float64)


def unstack_poses(rot: Rotation, trans: Matrix) -> list[Pose3]:
    quats = rot.as_quat().reshape(-1, 4)
    return [
        Pose3(quat_normalize_hemisphere((q[3], q[0], q[1], q[2])), row)
        for q, row in zip(quats, np.asarray(trans).reshape(-1, 3))
    ]


def hat_batch(v: Matrix) -> npt.NDArray[np.float64]:
    """(n, 3) vectors to (n, 3, 3) skew matrices."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def hat(v: t.Sequence[float] | Vector) -> Matrix:
    return hat_batch(np.asarray(v, dtype=np.float64))


def _angles(phi: Matrix) -> tuple[Vector, npt.NDArray[np.bool_], Vector]:
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    return theta, small, np.where(small, 1.0, theta)


def so3_left_jacobian_batch(phi: Matrix) -> npt.NDArray[np.float64]:
    _, small, safe = _angles(phi)
    skew = hat_batch(phi)
    half_sin = np.sin(0.5 * safe)
    a = np.where(small, 0.5, 2.0 * half_sin * half_sin / (safe * safe))
    b = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) + a[..., None, None] * skew + b[..., None, None] * (skew @ skew)


def so3_left_jacobian_inverse_batch(phi: Matrix) -> npt.NDArray[np.float64]:
    _, small, safe = _angles(phi)
    skew = hat_batch(phi)
    cot_half = np.cos(0.5 * safe) / np.sin(0.5 * safe)
    c = np.where(small, 1.0 / 12.0, 1.0 / (safe * safe) - cot_half / (2.0 * safe))
    return np.eye(3) - 0.5 * skew + c[..., None, None] * (skew @ skew)


def _se3_q_batch(phi: Matrix, rho: Matrix) -> npt.NDArray[np.float64]:
    theta = np.linalg.norm(phi, axis=-1)
    series = theta < SERIES_ANGLE
    safe = np.where(series, 1.0, theta)
    s, c = np.sin(safe), np.cos(safe)
    t2, s2 = theta * theta, safe * safe
    c1 = np.where(series, 1.0 / 6.0 - t2 / 120.0, (safe - s) / (s2 * safe))
    c2 = np.where(series, 1.0 / 24.0 - t2 / 720.0, (s2 + 2.0 * c - 2.0) / (2.0 * s2 * s2))
    c3 = np.where(series, 1.0 / 120.0 - t2 / 2520.0, (2.0 * safe - 3.0 * s + safe * c) / (2.0 * s2 * s2 * safe))
    p = hat_batch(phi)
    r = hat_batch(rho)
    pr = p @ r
    rp = r @ p
    prp = pr @ p
    pp = p @ p
    c1, c2, c3 = (k[..., None, None] for k in (c1, c2, c3))
    return 0.5 * r + c1 * (pr + rp + prp) + c2 * (pp @ r + r @ pp - 3.0 * prp) + c3 * (prp @ p + p @ prp)


def se3_left_jacobian_batch(xi: Matrix) -> npt.NDArray[np.float64]:
    xi = np.asarray(xi, dtype=np.float64)
    phi, rho = xi[..., :3], xi[..., 3:]
    jac = so3_left_jacobian_batch(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = jac
    out[..., 3:, :3] = _se3_q_batch(phi, rho)
    out[..., 3:, 3:] = jac
    return out


def se3_left_jacobian_inverse_batch(xi: Matrix) -> npt.NDArray[np.float64]:
    xi = np.asarray(xi, dtype=np.float64)
    phi, rho = xi[..., :3], xi[..., 3:]
    jinv = so3_left_jacobian_inverse_batch(phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = jinv
    out[..., 3:, :3] = -jinv @ _se3_q_batch(phi, rho) @ jinv
    out[..., 3:, 3:] = jinv
    return out


def se3_right_jacobian_inverse_batch(xi: Matrix) -> npt.NDArray[np.float64]:
    return se3_left_jacobian_inverse_batch(-np.asarray(xi, dtype=np.float64))


def adjoint_batch(rot: Rotation, trans: Matrix) -> npt.NDArray[np.float64]:
    mats = rot.as_matrix().reshape(-1, 3, 3)
    out = np.zeros((len(mats), 6, 6))
    out[:, :3, :3] = mats
    out[:, 3:, :3] = hat_batch(np.asarray(trans).reshape(-1, 3)) @ mats
    out[:, 3:, 3:] = mats
    return out


def exp_batch(xi: Matrix) -> tuple[Rotation, Matrix]:
    """(n, 6) twists to rotations and (n, 3) translations."""
    xi = np.asarray(xi, dtype=np.float64).reshape(-1, 6)
    if not np.all(np.isfinite(xi)):
        raise InvalidInputError("twist entries must be finite")
    phi, rho = xi[:, :3], xi[:, 3:]
    trans = np.einsum("nij,nj->ni", so3_left_jacobian_batch(phi), rho)
    return Rotation.from_rotvec(phi), trans


def log_batch(rot: Rotation, trans: Matrix) -> npt.NDArray[np.float64]:
    """Inverse of `exp_batch`; rotation parts have norm <= pi."""
    phi = rot.as_rotvec().reshape(-1, 3)
    out = np.empty((len(phi), 6))
    out[:, :3] = phi
    out[:, 3:] = np.einsum("nij,nj->ni", so3_left_jacobian_inverse_batch(phi), np.asarray(trans).reshape(-1, 3))
    return out


def compose(a: Pose3, b: Pose3) -> Pose3:
    return Pose3(quat_multiply(a.rotation, b.rotation), a.rotation_matrix @ b.translation + a.translation)


def inverse(p: Pose3) -> Pose3:
    return Pose3(p.rotation.conjugate(), -(p.rotation_matrix.T @ p.translation))


def between(a: Pose3, b: Pose3) -> Pose3:
    return compose(inverse(a), b)


def relative_object_pose(camera_in_world: Pose3, object_in_world: Pose3) -> Pose3:
    """h(X) = inverse(camera) o object: the object as seen from the camera."""
    return compose(inverse(camera_in_world), object_in_world)


def so3_left_jacobian(phi: Vector) -> Matrix:
    return so3_left_jacobian_batch(np.asarray(phi, dtype=np.float64))


def so3_left_jacobian_inverse(phi: Vector) -> Matrix:
    return so3_left_jacobian_inverse_batch(np.asarray(phi, dtype=np.float64))


def se3_left_jacobian(xi: Twist) -> Matrix:
    return se3_left_jacobian_batch(xi)


def se3_left_jacobian_inverse(xi: Twist) -> Matrix:
    return se3_left_jacobian_inverse_batch(xi)


def se3_right_jacobian_inverse(xi: Twist) -> Matrix:
    return se3_right_jacobian_inverse_batch(xi)


def adjoint(p: Pose3) -> Matrix:
    return adjoint_batch(p.rotation.as_rotation(), p.translation)[0]


def exp(xi: Twist | t.Sequence[float]) -> Pose3:
    rot, trans = exp_batch(np.asarray(xi, dtype=np.float64).reshape(1, 6))
    return unstack_poses(rot, trans)[0]


def log_rotation(q: UnitQuaternion) -> Vector:
    """Rotation vector of norm <= pi; at exactly pi the hemisphere tie rule fixes the sign."""
    return q.as_rotation().as_rotvec()


def log(p: Pose3) -> Twist:
    return log_batch(p.rotation.as_rotation(), p.translation)[0]


def tangent_distance(a: Pose3, b: Pose3) -> float:
    return float(np.linalg.norm(log(between(a, b))))


def rotation_angular_distance(a: Pose3, b: Pose3) -> float:
    """Geodesic angle in [0, pi] between two rotations."""
    if a.rotation == b.rotation:
        return 0.0
    relative = a.rotation.as_rotation().inv() * b.rotation.as_rotation()
    return min(float(relative.magnitude()), math.pi)


def chordal_distance(a: Pose3, b: Pose3) -> float:
    rot = a.rotation_matrix - b.rotation_matrix
    trans = a.translation - b.translation
    return math.sqrt(float(np.sum(rot * rot)) + float(trans @ trans))


def interpolate(a: Pose3, b: Pose3, s: float) -> Pose3:
    return compose(a, exp(s * log(between(a, b))))


def random_rotation(rng: np.random.Generator) -> UnitQuaternion:
    """Uniform over SO(3): a normalized 4D Gaussian sample."""
    return quat_normalize_hemisphere(rng.standard_normal(4))


def random_pose(rng: np.random.Generator, translation_scale: float = 1.0) -> Pose3:
    rotation = random_rotation(rng)
    return Pose3(rotation, rng.uniform(-translation_scale, translation_scale, size=3))


def rotation_about(axis: t.Sequence[float] | Vector, angle: float) -> Pose3:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    xi = np.zeros(6)
    xi[:3] = angle * a
    return exp(xi)


__all__ = [
    "Pose3",
    "QuaternionLike",
    "Twist",
    "UnitQuaternion",
    "adjoint",
    "adjoint_batch",
    "between",
    "chordal_distance",
    "compose",
    "exp",
    "exp_batch",
    "hat",
    "hat_batch",
    "identity",
    "interpolate",
    "inverse",
    "log",
    "log_batch",
    "log_rotation",
    "quat_from_matrix",
    "quat_multiply",
    "quat_normalize_hemisphere",
    "random_pose",
    "random_rotation",
    "relative_object_pose",
    "rotation_about",
    "rotation_angular_distance",
    "se3_left_jacobian",
    "se3_left_jacobian_batch",
    "se3_left_jacobian_inverse",
    "se3_left_jacobian_inverse_batch",
    "se3_right_jacobian_inverse",
    "se3_right_jacobian_inverse_batch",
    "so3_left_jacobian",
    "so3_left_jacobian_batch",
    "so3_left_jacobian_inverse",
    "so3_left_jacobian_inverse_batch",
    "stack_poses",
    "tangent_distance",
    "unstack_poses",
]
