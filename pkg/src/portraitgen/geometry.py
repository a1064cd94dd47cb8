"""Portrait geometry primitives.

The per-frame motion state of a portrait is a set of point clouds plus a
6-DoF head pose. Face-related points live in a head-pose-normalized
("canonical") frame; the head pose maps them into camera coordinates,
and a camera model projects camera-space points to pixels.

Euler convention: intrinsic X-Y-Z (pitch, yaw, roll), configurable at the
call sites that need an alternative. All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, ShapeMismatch

MOUTH_POINT_COUNT = 40
EYE_POINT_COUNT = 60
FACE_POINT_COUNT = 478
TORSO_POINT_COUNT = 18
TORSO_SIDE_COUNT = 9
POSE_DIM = 6


def _validate_points(points, rows, name):
    arr = np.asarray(points, dtype=np.float64)
    if arr.shape != (rows, 3):
        raise ShapeMismatch(f"{name} expects shape ({rows}, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class MouthPoints:
    """40 canonical-space mouth points."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _validate_points(self.points, MOUTH_POINT_COUNT, "MouthPoints"))


@dataclass(frozen=True)
class EyePoints:
    """60 canonical-space eye + eyebrow points."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _validate_points(self.points, EYE_POINT_COUNT, "EyePoints"))


@dataclass(frozen=True)
class FacePoints:
    """478 dense canonical-space facial points."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _validate_points(self.points, FACE_POINT_COUNT, "FacePoints"))


@dataclass(frozen=True)
class TorsoPoints:
    """18 camera-space shoulder points, 9 per side (left first)."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _validate_points(self.points, TORSO_POINT_COUNT, "TorsoPoints"))

    @property
    def left(self) -> np.ndarray:
        return self.points[:TORSO_SIDE_COUNT]

    @property
    def right(self) -> np.ndarray:
        return self.points[TORSO_SIDE_COUNT:]


@dataclass(frozen=True)
class HeadPose:
    """Rigid transform: 3 Euler angles (radians) + 3 translations."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ShapeMismatch("HeadPose requires finite angles and translation")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def from_vector(cls, vec) -> "HeadPose":
        vec = np.asarray(vec, dtype=np.float64).reshape(POSE_DIM)
        return cls(rotation=vec[:3], translation=vec[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def identity(cls) -> "HeadPose":
        return cls(rotation=np.zeros(3), translation=np.zeros(3))


@dataclass(frozen=True)
class MotionRepresentation:
    """Full per-frame portrait state: mouth, eyes, dense face, pose, torso."""

    mouth: MouthPoints
    eyes: EyePoints
    face: FacePoints
    pose: HeadPose
    torso: TorsoPoints


@dataclass(frozen=True)
class CameraModel:
    """Projection model for camera-space points.

    Orthographic: pixel = (x, y) * scale + principal.
    Pinhole: pixel = (x, y) * focal / z + principal; requires z > 0.
    """

    mode: str = "orthographic"
    scale: float = 1.0
    principal: tuple[float, float] = (0.0, 0.0)
    image_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if self.mode not in ("orthographic", "pinhole"):
            raise ShapeMismatch(f"unknown camera mode {self.mode!r}")
        if self.scale <= 0:
            raise ShapeMismatch("camera scale/focal must be positive")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ShapeMismatch("image size must be positive")


def euler_to_matrix(pose: HeadPose) -> np.ndarray:
    """Rotation matrix for the pose's intrinsic X-Y-Z Euler angles.

    Always orthonormal with determinant +1.
    """
    theta, phi, psi = pose.rotation
    cx, sx = np.cos(theta), np.sin(theta)
    cy, sy = np.cos(phi), np.sin(phi)
    cz, sz = np.cos(psi), np.sin(psi)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def to_camera(points: np.ndarray, pose: HeadPose) -> np.ndarray:
    """Map canonical points into camera space: R @ p + t, row-wise."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) points, got {pts.shape}")
    rot = euler_to_matrix(pose)
    return pts @ rot.T + pose.translation


def to_canonical(points: np.ndarray, pose: HeadPose) -> np.ndarray:
    """Exact inverse of :func:`to_camera`: R^T @ (p - t), row-wise."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) points, got {pts.shape}")
    rot = euler_to_matrix(pose)
    return (pts - pose.translation) @ rot


def project(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Project camera-space points to 2D image coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"expected (N, 3) points, got {pts.shape}")
    principal = np.asarray(cam.principal, dtype=np.float64)
    if cam.mode == "orthographic":
        return pts[:, :2] * cam.scale + principal
    z = pts[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("pinhole projection requires all z > 0")
    return pts[:, :2] * (cam.scale / z)[:, None] + principal


def displacement(x: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Elementwise offset of ``x`` from a per-subject reference value."""
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise ShapeMismatch(f"displacement shapes differ: {x.shape} vs {reference.shape}")
    return x - reference


def apply_displacement(delta: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Inverse of :func:`displacement`: reference + delta."""
    delta = np.asarray(delta, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if delta.shape != reference.shape:
        raise ShapeMismatch(f"displacement shapes differ: {delta.shape} vs {reference.shape}")
    return reference + delta
