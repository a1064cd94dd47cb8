"""File formats used at module boundaries.

Arrays are stored as flat little-endian float32 with a JSON sidecar
manifest describing the shape; images as PNG. Writes are atomic
(temp file + rename) so partially written outputs never alias valid ones.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import DataError


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_landmarks(path, landmarks: np.ndarray):
    """Store a [frames, points, dims] landmark tensor as .bin + .json."""
    arr = np.ascontiguousarray(landmarks, dtype="<f4")
    if arr.ndim != 3:
        raise DataError(f"landmark tensor must be 3-D, got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes())
    manifest = {"frames": arr.shape[0], "points": arr.shape[1], "dims": arr.shape[2]}
    atomic_write_bytes(path.with_suffix(".json"), json.dumps(manifest).encode())


def read_landmarks(path) -> np.ndarray:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    shape = (manifest["frames"], manifest["points"], manifest["dims"])
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match manifest {manifest}")
    return data.reshape(shape).astype(np.float64)


def write_poses(path, poses: np.ndarray):
    """Store a [frames, 6] pose matrix as .bin + .json."""
    arr = np.ascontiguousarray(poses, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise DataError(f"pose matrix must be [frames, 6], got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes())
    atomic_write_bytes(path.with_suffix(".json"), json.dumps({"frames": arr.shape[0]}).encode())


def read_poses(path) -> np.ndarray:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != manifest["frames"] * 6:
        raise DataError(f"{path}: payload size does not match manifest {manifest}")
    return data.reshape(manifest["frames"], 6).astype(np.float64)


def write_features(path, features: np.ndarray, fps: float):
    """Store a [frames, dim] feature matrix as .bin + .json."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes())
    manifest = {"frames": arr.shape[0], "dim": arr.shape[1], "fps": fps}
    atomic_write_bytes(path.with_suffix(".json"), json.dumps(manifest).encode())


def read_features(path) -> tuple[np.ndarray, float]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != manifest["frames"] * manifest["dim"]:
        raise DataError(f"{path}: payload size does not match manifest {manifest}")
    return data.reshape(manifest["frames"], manifest["dim"]).astype(np.float64), float(manifest["fps"])


def write_flow(path, flow: np.ndarray):
    """Store a [H, W, 2] optical-flow field as .bin + .json."""
    arr = np.ascontiguousarray(flow, dtype="<f4")
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise DataError(f"flow field must be [H, W, 2], got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes())
    atomic_write_bytes(path.with_suffix(".json"), json.dumps({"height": arr.shape[0], "width": arr.shape[1]}).encode())


def read_flow(path) -> np.ndarray:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != manifest["height"] * manifest["width"] * 2:
        raise DataError(f"{path}: payload size does not match manifest {manifest}")
    return data.reshape(manifest["height"], manifest["width"], 2).astype(np.float64)


def write_condition_cache(path, stack: np.ndarray):
    """Store an assembled condition stack [C, H, W] as float16 binary."""
    arr = np.ascontiguousarray(stack, dtype="<f2")
    if arr.ndim != 3:
        raise DataError(f"condition stack must be [C, H, W], got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes())
    manifest = {"channels": arr.shape[0], "height": arr.shape[1], "width": arr.shape[2]}
    atomic_write_bytes(path.with_suffix(".json"), json.dumps(manifest).encode())


def read_condition_cache(path) -> np.ndarray:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    shape = (manifest["channels"], manifest["height"], manifest["width"])
    data = np.frombuffer(path.read_bytes(), dtype="<f2")
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match manifest {manifest}")
    return data.reshape(shape).astype(np.float32)


def write_json(path, payload: dict):
    atomic_write_bytes(Path(path), json.dumps(payload, indent=2, sort_keys=True).encode())


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
