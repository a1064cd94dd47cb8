"""Shared test helpers: finite-difference gradient checking and synthetic
portrait data (canonical face, clip directories) used across suites."""

import json
from pathlib import Path

import cv2
import numpy as np
import pytest
import torch

from portraitgen import io
from portraitgen.audio import Waveform, save_wav
from portraitgen.geometry import CameraModel, HeadPose, to_camera, project
from portraitgen.template import eye_indices, mouth_indices


def central_diff_check(fn, tensors, eps=1e-6, rtol=1e-4, atol=1e-7, max_coords=16, seed=0):
    """Compare autograd gradients of ``fn()`` against central differences.

    ``tensors`` are double-precision leaves feeding fn; for big tensors a
    random subset of coordinates is probed.
    """
    loss = fn()
    grads = torch.autograd.grad(loss, tensors)
    rng = np.random.default_rng(seed)
    for tensor, grad in zip(tensors, grads):
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.numel()
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            i = int(i)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
            up = fn().item()
            with torch.no_grad():
                flat[i] = orig - eps
            down = fn().item()
            with torch.no_grad():
                flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = gflat[i].item()
            err = abs(numeric - analytic)
            bound = rtol * max(abs(numeric), abs(analytic)) + atol
            assert err <= bound, f"coord {i}: analytic {analytic:.8g} vs numeric {numeric:.8g} (err {err:.3g} > {bound:.3g})"


def grad_check_params(module, fn, max_params=4, **kwargs):
    """Finite-difference check over a sample of a module's parameters."""
    params = [p for p in module.parameters() if p.requires_grad][:max_params]
    central_diff_check(fn, params, **kwargs)


def synthetic_face(seed=0) -> np.ndarray:
    """A deterministic 478-point canonical head with inter-ocular distance
    close to 1: points on a squashed sphere, eye/mouth indices relocated
    to plausible clusters."""
    rng = np.random.default_rng(seed)
    n = 478
    golden = np.pi * (3 - np.sqrt(5))
    i = np.arange(n)
    y = 1 - 2 * (i + 0.5) / n
    radius = np.sqrt(np.clip(1 - y * y, 0, 1))
    theta = golden * i
    pts = np.stack([radius * np.cos(theta), y, radius * np.sin(theta)], axis=1)
    pts *= np.array([1.1, 1.4, 1.0])
    pts += rng.normal(scale=0.01, size=pts.shape)

    eyes = eye_indices()
    left_center = np.array([-0.5, 0.35, 0.85])
    right_center = np.array([0.5, 0.35, 0.85])
    ring = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    eye_ring = np.stack([0.12 * np.cos(ring), 0.07 * np.sin(ring), np.zeros(16)], axis=1)
    pts[eyes[:16]] = left_center + eye_ring
    pts[eyes[16:32]] = right_center + eye_ring
    pts[eyes[32:]] = rng.normal(scale=0.05, size=(len(eyes) - 32, 3)) + [0.0, 0.55, 0.9]

    mouth = mouth_indices()
    ring20 = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    outer = np.stack([0.30 * np.cos(ring20), 0.16 * np.sin(ring20), np.zeros(20)], axis=1)
    inner = outer * 0.6
    mouth_center = np.array([0.0, -0.55, 0.9])
    pts[mouth[:20]] = mouth_center + outer
    pts[mouth[20:]] = mouth_center + inner
    return pts


def synthetic_segmentation(size=64, shoulder_top=None, face_center=None, face_radius=10):
    """Label map with a face disc (2) and a flat-top shoulders block (3)."""
    if shoulder_top is None:
        shoulder_top = int(size * 0.7)
    if face_center is None:
        face_center = (size // 2, int(size * 0.4))
    labels = np.zeros((size, size), dtype=np.uint8)
    cv2.circle(labels, face_center, face_radius, 2, -1)
    labels[shoulder_top:, :] = 3
    return labels


def make_clip(
    clip_dir: Path,
    n_frames: int = 20,
    size: int = 64,
    fps: float = 25.0,
    sample_rate: int = 16000,
    seed: int = 0,
    face_scale: float = 8.0,
):
    """Write a fully synthetic clip directory: frames, landmarks, poses,
    segmentation, audio. Landmarks move (mouth opens/closes, head sways)
    so every stage has signal to learn."""
    rng = np.random.default_rng(seed)
    clip_dir = Path(clip_dir)
    (clip_dir / "frames").mkdir(parents=True, exist_ok=True)
    (clip_dir / "seg").mkdir(exist_ok=True)

    base = synthetic_face(seed)
    mouth = mouth_indices()
    cam = CameraModel(mode="orthographic", scale=face_scale, principal=(size / 2, size / 2 - 6), image_size=(size, size))

    landmarks = np.zeros((n_frames, 478, 3))
    poses = np.zeros((n_frames, 6))
    for t in range(n_frames):
        phase = 2 * np.pi * t / max(n_frames, 1)
        face_t = base.copy()
        face_t[mouth, 1] += 0.08 * np.sin(phase * 2)  # mouth open/close
        pose = HeadPose(
            rotation=[0.05 * np.sin(phase), 0.08 * np.cos(phase), 0.0],
            translation=[0.1 * np.sin(phase), 0.0, 5.0],
        )
        poses[t] = pose.as_vector()
        landmarks[t] = to_camera(face_t, pose)

    io.write_landmarks(clip_dir / "landmarks.bin", landmarks)
    io.write_poses(clip_dir / "poses.bin", poses)

    for t in range(n_frames):
        labels = synthetic_segmentation(size)
        cv2.imwrite(str(clip_dir / "seg" / f"{t:06d}.png"), labels)
        frame = np.zeros((size, size, 3), dtype=np.uint8)
        frame[:, :, 0] = np.linspace(30, 90, size, dtype=np.uint8)[:, None]
        pts2d = project(landmarks[t], cam)
        center = tuple(np.round(pts2d.mean(axis=0)).astype(int))
        cv2.circle(frame, center, 12, (60, 140, 220), -1)
        ring = np.round(pts2d[mouth[:20]]).astype(np.int32)
        cv2.fillPoly(frame, [ring], (40, 40, 160))
        frame[int(size * 0.7) :, :] = (90, 60, 40)
        cv2.imwrite(str(clip_dir / "frames" / f"{t:06d}.png"), frame)

    n_samples = int(n_frames * sample_rate / fps)
    tt = np.arange(n_samples) / sample_rate
    audio = 0.3 * np.sin(2 * np.pi * 220 * tt) + 0.1 * np.sin(2 * np.pi * 440 * tt * (1 + 0.2 * np.sin(2 * np.pi * tt)))
    save_wav(clip_dir / "audio.wav", Waveform(samples=audio, sample_rate=sample_rate))
    return cam


@pytest.fixture
def synthetic_face_points():
    return synthetic_face()
