"""Subject template: canonical face shape plus per-stream reference values.

The template fixes the reference values that motion displacements are
measured against, and the scale that normalizes canonical space so the
inter-ocular distance is ~1 (making mouth-distance metrics comparable
across subjects).

Index-map convention (data/*.json): mouth entries 0..19 are the outer lip
ring in loop order, 20..39 the inner ring; eye entries 0..15 are the left
eye ring, 16..31 the right eye ring, the rest eyebrows and iris points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeMismatch
from .geometry import EYE_POINT_COUNT, FACE_POINT_COUNT, MOUTH_POINT_COUNT, TORSO_POINT_COUNT


def _load_index_map(name: str, expected: int) -> np.ndarray:
    text = resources.files("portraitgen.data").joinpath(name).read_text()
    idx = np.asarray(json.loads(text), dtype=np.int64)
    if idx.shape != (expected,):
        raise DataError(f"{name}: expected {expected} indices, got {idx.shape}")
    return idx


def mouth_indices() -> np.ndarray:
    return _load_index_map("mouth_indices.json", MOUTH_POINT_COUNT)


def eye_indices() -> np.ndarray:
    return _load_index_map("eye_indices.json", EYE_POINT_COUNT)


def mouth_outer_ring() -> np.ndarray:
    """Outer lip ring in loop order (usable as a polygon)."""
    return mouth_indices()[:20]


def interocular_distance(face: np.ndarray) -> float:
    """Distance between the left and right eye-ring centroids."""
    eyes = eye_indices()
    left = face[eyes[:16]].mean(axis=0)
    right = face[eyes[16:32]].mean(axis=0)
    return float(np.linalg.norm(left - right))


@dataclass(frozen=True)
class SubjectTemplate:
    """Canonical face vertices of a subject plus per-stream references.

    ``face`` and point references are in normalized canonical units
    (inter-ocular distance ~1); ``scale`` converts unnormalized canonical
    coordinates into that space (multiply) and back (divide).
    ``torso_ref`` stays in camera units.
    """

    face: np.ndarray
    mouth_ref: np.ndarray
    eye_ref: np.ndarray
    pose_ref: np.ndarray
    torso_ref: np.ndarray
    scale: float

    def __post_init__(self):
        checks = [
            ("face", self.face, (FACE_POINT_COUNT, 3)),
            ("mouth_ref", self.mouth_ref, (MOUTH_POINT_COUNT, 3)),
            ("eye_ref", self.eye_ref, (EYE_POINT_COUNT, 3)),
            ("pose_ref", self.pose_ref, (6,)),
            ("torso_ref", self.torso_ref, (TORSO_POINT_COUNT, 3)),
        ]
        for name, arr, shape in checks:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"template {name} expects shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if not self.scale > 0:
            raise ShapeMismatch("template scale must be positive")


def build_template(faces: np.ndarray, poses: np.ndarray, torsos: np.ndarray) -> SubjectTemplate:
    """Average canonical frames into a template and normalize its scale.

    ``faces`` are unnormalized canonical [T, 478, 3]; ``poses`` [T, 6];
    ``torsos`` camera-space [T, 18, 3].
    """
    faces = np.asarray(faces, dtype=np.float64)
    poses = np.asarray(poses, dtype=np.float64)
    torsos = np.asarray(torsos, dtype=np.float64)
    if faces.ndim != 3 or faces.shape[1:] != (FACE_POINT_COUNT, 3):
        raise ShapeMismatch(f"faces must be [T, 478, 3], got {faces.shape}")
    if len(faces) == 0:
        raise DataError("cannot build a template from zero frames")
    mean_face = faces.mean(axis=0)
    iod = interocular_distance(mean_face)
    if iod <= 0:
        raise DataError("degenerate face: zero inter-ocular distance")
    scale = 1.0 / iod
    face_n = mean_face * scale
    return SubjectTemplate(
        face=face_n,
        mouth_ref=face_n[mouth_indices()],
        eye_ref=face_n[eye_indices()],
        pose_ref=poses.mean(axis=0),
        torso_ref=torsos.mean(axis=0),
        scale=scale,
    )


def save_template(path, template: SubjectTemplate):
    np.savez(
        Path(path),
        face=template.face,
        mouth_ref=template.mouth_ref,
        eye_ref=template.eye_ref,
        pose_ref=template.pose_ref,
        torso_ref=template.torso_ref,
        scale=np.float64(template.scale),
    )


def load_template(path) -> SubjectTemplate:
    path = Path(path)
    if not path.exists():
        raise DataError(f"template not found: {path}")
    with np.load(path) as z:
        return SubjectTemplate(
            face=z["face"],
            mouth_ref=z["mouth_ref"],
            eye_ref=z["eye_ref"],
            pose_ref=z["pose_ref"],
            torso_ref=z["torso_ref"],
            scale=float(z["scale"]),
        )
