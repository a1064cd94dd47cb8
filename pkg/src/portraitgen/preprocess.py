"""Data preparation: landmark canonicalization, semantic-guided torso-point
extraction, and training-record assembly from clip directories.

Expected clip layout:
  {clip}/frames/%06d.png   raw frames
  {clip}/landmarks.bin     camera-space dense landmarks [T, 478, 3] (+ .json)
  {clip}/poses.bin         head poses [T, 6] (+ .json)
  {clip}/seg/%06d.png      8-bit label maps (+ seg/palette.json)
  {clip}/audio.wav         synchronized audio

External detectors produce landmarks, poses, and segmentation; this module
only consumes their outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import io
from .audio import extract_features, load_wav
from .errors import CountMismatch, DataError, DegenerateContour, NoBody, ShapeMismatch, TooFewPoints
from .geometry import FacePoints, EyePoints, HeadPose, MouthPoints, TorsoPoints, to_canonical
from .template import SubjectTemplate, build_template, eye_indices, mouth_indices, save_template

DEFAULT_PALETTE = {"background": 0, "hair": 1, "face": 2, "upper_body": 3}


@dataclass(frozen=True)
class SegmentationMap:
    """Integer label image plus the name->id palette it was written with."""

    labels: np.ndarray
    palette: dict = field(default_factory=lambda: dict(DEFAULT_PALETTE))

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise ShapeMismatch("segmentation labels must be a 2-D integer array")
        object.__setattr__(self, "labels", labels)

    def mask(self, name: str) -> np.ndarray:
        if name not in self.palette:
            raise DataError(f"palette has no class {name!r}")
        return self.labels == self.palette[name]


def load_segmentation(path, palette: dict | None = None) -> SegmentationMap:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise DataError(f"cannot read segmentation map {path}")
    return SegmentationMap(labels=img.astype(np.int64), palette=palette or dict(DEFAULT_PALETTE))


def semantic_boundary(seg: SegmentationMap) -> np.ndarray:
    """Upper-body pixels 4-adjacent to background or hair, as a boolean mask."""
    body = seg.mask("upper_body")
    if not body.any():
        raise NoBody("segmentation contains no upper-body pixels")
    open_region = seg.mask("background") | seg.mask("hair")
    neighbor = np.zeros_like(open_region)
    neighbor[1:, :] |= open_region[:-1, :]
    neighbor[:-1, :] |= open_region[1:, :]
    neighbor[:, 1:] |= open_region[:, :-1]
    neighbor[:, :-1] |= open_region[:, 1:]
    return body & neighbor


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def polygon_fit(contour: np.ndarray, epsilon: float) -> np.ndarray:
    """Iterative Douglas-Peucker simplification of an open polyline.

    Every discarded point lies within ``epsilon`` of the returned polyline.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeMismatch(f"contour must be [N, 2], got {pts.shape}")
    if pts.shape[0] < 3:
        raise TooFewPoints(f"polygon fitting needs >= 3 points, got {pts.shape[0]}")
    keep = np.zeros(len(pts), dtype=bool)
    keep[[0, -1]] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi <= lo + 1:
            continue
        dist = _point_segment_distance(pts[lo + 1 : hi], pts[lo], pts[hi])
        idx = int(np.argmax(dist))
        if dist[idx] > epsilon:
            split = lo + 1 + idx
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return pts[keep]


def _densify(polygon: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Resample polygon edges so consecutive candidates are <= spacing apart."""
    out = []
    for a, b in zip(polygon[:-1], polygon[1:]):
        seg_len = float(np.linalg.norm(b - a))
        steps = max(1, int(np.ceil(seg_len / spacing)))
        for s in range(steps):
            out.append(a + (b - a) * (s / steps))
    out.append(polygon[-1])
    return np.asarray(out)


def _rotate_to_path_start(candidates: np.ndarray) -> np.ndarray:
    """Start the (cyclically ordered) side candidates after their largest
    gap, so the arc parameterization is independent of where the closed
    contour happened to begin."""
    if len(candidates) < 2:
        return candidates
    gaps = np.linalg.norm(np.roll(candidates, -1, axis=0) - candidates, axis=1)
    start = (int(np.argmax(gaps)) + 1) % len(candidates)
    return np.roll(candidates, -start, axis=0)


def _select_along_arc(candidates: np.ndarray, k: int) -> np.ndarray:
    """Snap k uniformly spaced arc anchors to their nearest unused candidate.

    Candidates are in path order; ties break by lower x then lower y.
    """
    candidates = _rotate_to_path_start(candidates)
    diffs = np.linalg.norm(np.diff(candidates, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(diffs)])
    total = cum[-1] if cum[-1] > 0 else 1.0
    used = np.zeros(len(candidates), dtype=bool)
    chosen = []
    for j in range(k):
        target = (j + 0.5) / k * total
        seg = int(np.searchsorted(cum, target, side="right") - 1)
        seg = min(max(seg, 0), len(candidates) - 2)
        frac = (target - cum[seg]) / max(cum[seg + 1] - cum[seg], 1e-12)
        anchor = candidates[seg] + (candidates[seg + 1] - candidates[seg]) * frac
        dist = np.linalg.norm(candidates - anchor, axis=1)
        dist[used] = np.inf
        best = np.lexsort((candidates[:, 1], candidates[:, 0], dist))[0]
        used[best] = True
        chosen.append(candidates[best])
    return np.asarray(chosen)


def extract_torso_points(
    seg: SegmentationMap,
    face_depth: float,
    k: int = 9,
    dilate_iterations: int = 2,
    epsilon: float = 2.0,
) -> TorsoPoints:
    """Semantic-guided 3D torso points: k per shoulder side, z = face depth.

    Steps: upper-body/background boundary; 3x3 dilation (2 iterations) and
    polygon fitting of the resulting contour; per-side selection of exactly
    k keypoints via arc-uniform anchors; constant depth from the face mesh.
    """
    if not np.isfinite(face_depth):
        raise DataError("face depth must be finite")
    boundary = semantic_boundary(seg)
    mask = boundary.astype(np.uint8)
    if dilate_iterations > 0:
        mask = cv2.dilate(mask, np.ones((3, 3), dtype=np.uint8), iterations=dilate_iterations)
    contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        raise DegenerateContour("no contour around the dilated boundary")
    contour = max(contours, key=len).reshape(-1, 2).astype(np.float64)  # (x, y)
    if len(contour) < 3:
        raise DegenerateContour(f"contour has only {len(contour)} points")

    closed = np.vstack([contour, contour[:1]])
    simplified = polygon_fit(closed, epsilon)
    candidates = _densify(simplified)
    if len(candidates) < 2 * k:
        raise DegenerateContour(f"only {len(candidates)} torso candidates, need {2 * k}")

    face = seg.mask("face")
    anchor_region = face if face.any() else seg.mask("upper_body")
    cols = np.where(anchor_region.any(axis=0))[0]
    center_x = (cols[0] + cols[-1]) / 2.0

    left = candidates[candidates[:, 0] < center_x]
    right = candidates[candidates[:, 0] >= center_x]
    if len(left) < k or len(right) < k:
        raise DegenerateContour(f"side candidate counts {len(left)}/{len(right)} below k={k}")
    left_pts = _select_along_arc(left, k)
    right_pts = _select_along_arc(right, k)

    points = np.zeros((2 * k, 3))
    points[:k, :2] = left_pts
    points[k:, :2] = right_pts
    points[:, 2] = face_depth
    return TorsoPoints(points=points)


def canonicalize(landmarks_camera: np.ndarray, pose: HeadPose):
    """Map detected camera-space landmarks into canonical space and slice
    out the mouth and eye subsets via the shipped index maps."""
    landmarks_camera = np.asarray(landmarks_camera, dtype=np.float64)
    if landmarks_camera.shape != (478, 3):
        raise ShapeMismatch(f"expected [478, 3] landmarks, got {landmarks_camera.shape}")
    canonical = to_canonical(landmarks_camera, pose)
    face = FacePoints(points=canonical)
    return face, MouthPoints(points=canonical[mouth_indices()]), EyePoints(points=canonical[eye_indices()])


# -- dataset assembly ----------------------------------------------------------

@dataclass(frozen=True)
class TrainingRecord:
    """One frame's worth of aligned training data (paths + array views)."""

    clip: str
    frame_index: int
    audio_row: np.ndarray
    frame_path: str
    condition_path: str


@dataclass
class ClipData:
    """All processed arrays of one clip, in frame order.

    Point streams are in normalized canonical units (template scale applied);
    poses and torso points keep their camera-space units.
    """

    name: str
    faces: np.ndarray
    mouths: np.ndarray
    eyes: np.ndarray
    poses: np.ndarray
    torsos: np.ndarray
    features: np.ndarray
    frame_paths: list
    condition_paths: list
    template: SubjectTemplate
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def frames(self) -> int:
        return len(self.frame_paths)

    def records(self, split: str) -> list:
        idx = self.train_idx if split == "train" else self.val_idx
        return [
            TrainingRecord(
                clip=self.name,
                frame_index=int(i),
                audio_row=self.features[i],
                frame_path=self.frame_paths[i],
                condition_path=self.condition_paths[i],
            )
            for i in idx
        ]


def split_contiguous(n_frames: int, val_fraction: float = 0.2, seed: int = 0):
    """Hold out one contiguous chunk (~val_fraction of frames) chosen by seed."""
    n_chunks = max(1, int(round(1.0 / val_fraction)))
    chunks = np.array_split(np.arange(n_frames), n_chunks)
    rng = np.random.default_rng(seed)
    val_chunk = int(rng.integers(0, len(chunks)))
    val_idx = chunks[val_chunk]
    train_idx = np.concatenate([c for i, c in enumerate(chunks) if i != val_chunk]) if len(chunks) > 1 else np.array([], dtype=int)
    return train_idx, val_idx


def process_clip(
    clip_dir,
    fps: float = 25.0,
    extractor=None,
    camera=None,
    seed: int = 0,
    val_fraction: float = 0.2,
    renderer_cfg=None,
) -> ClipData:
    """Canonicalize one clip's streams and write its processed artifacts."""
    from .renderer import RendererConfig, assemble_condition, mesh_edges
    from .geometry import CameraModel, project, to_camera

    clip_dir = Path(clip_dir)
    frame_paths = sorted((clip_dir / "frames").glob("*.png"))
    seg_paths = sorted((clip_dir / "seg").glob("*.png"))
    landmarks = io.read_landmarks(clip_dir / "landmarks.bin")
    poses = io.read_poses(clip_dir / "poses.bin")

    counts = {
        "frames": len(frame_paths),
        "landmarks": landmarks.shape[0],
        "poses": poses.shape[0],
        "seg": len(seg_paths),
    }
    if len(set(counts.values())) != 1:
        raise CountMismatch(f"stream lengths differ in {clip_dir.name}: {counts}")
    t_frames = counts["frames"]
    if t_frames == 0:
        raise CountMismatch(f"{clip_dir.name} has no frames")

    waveform = load_wav(clip_dir / "audio.wav")
    feats = extract_features(waveform, fps, extractor)
    if feats.frames < t_frames:
        raise CountMismatch(
            f"{clip_dir.name}: audio yields {feats.frames} feature rows < {t_frames} frames"
        )
    features = feats.features[:t_frames]

    palette_path = clip_dir / "seg" / "palette.json"
    palette = json.loads(palette_path.read_text()) if palette_path.exists() else dict(DEFAULT_PALETTE)

    faces, mouths, eyes, torsos = [], [], [], []
    for t in range(t_frames):
        pose = HeadPose.from_vector(poses[t])
        face, mouth, eye = canonicalize(landmarks[t], pose)
        seg = load_segmentation(seg_paths[t], palette)
        torso = extract_torso_points(seg, face_depth=float(landmarks[t][:, 2].mean()))
        faces.append(face.points)
        mouths.append(mouth.points)
        eyes.append(eye.points)
        torsos.append(torso.points)
    faces = np.stack(faces)
    mouths = np.stack(mouths)
    eyes = np.stack(eyes)
    torsos = np.stack(torsos)

    template = build_template(faces, poses, torsos)
    faces_n = faces * template.scale
    mouths_n = mouths * template.scale
    eyes_n = eyes * template.scale

    out = clip_dir / "processed"
    out.mkdir(exist_ok=True)
    io.write_landmarks(out / "face.bin", faces_n)
    io.write_landmarks(out / "mouth.bin", mouths_n)
    io.write_landmarks(out / "eye.bin", eyes_n)
    io.write_landmarks(out / "torso.bin", torsos)
    io.write_poses(out / "pose.bin", poses)
    io.write_features(out / "features.bin", features, fps)
    save_template(out / "template.npz", template)

    # condition rasters: template-topology face edges + torso polylines
    renderer_cfg = renderer_cfg or RendererConfig(resolution=64, enc_channels=(16, 32, 64, 64, 64, 64))
    first = cv2.imread(str(frame_paths[0]), cv2.IMREAD_COLOR)
    if first is None:
        raise DataError(f"cannot read frame {frame_paths[0]}")
    if camera is None:
        h, w = first.shape[:2]
        camera = CameraModel(mode="orthographic", scale=1.0, principal=(w / 2.0, h / 2.0), image_size=(w, h))
    w, h = camera.image_size
    if first.shape[:2] != (h, w):
        first = cv2.resize(first, (w, h), interpolation=cv2.INTER_AREA)
    cam = camera
    edges = mesh_edges(project(to_camera(template.face / template.scale, HeadPose.from_vector(template.pose_ref)), cam))
    cond_dir = out / "conditions"
    cond_dir.mkdir(exist_ok=True)
    reference = first.astype(np.float32) / 127.5 - 1.0
    condition_paths = []
    for t in range(t_frames):
        pose = HeadPose.from_vector(poses[t])
        face_2d = project(to_camera(faces_n[t] / template.scale, pose), cam)
        torso_2d = project(torsos[t], cam)
        cond = assemble_condition(face_2d, torso_2d, reference, t, renderer_cfg, edges=edges)
        path = cond_dir / f"{t:06d}.png"
        cv2.imwrite(str(path), ((cond.condition + 1.0) * 127.5).astype(np.uint8))
        condition_paths.append(str(path))

    train_idx, val_idx = split_contiguous(t_frames, val_fraction=val_fraction, seed=seed)
    io.write_json(out / "split.json", {"train": train_idx.tolist(), "val": val_idx.tolist(), "seed": seed})

    return ClipData(
        name=clip_dir.name,
        faces=faces_n,
        mouths=mouths_n,
        eyes=eyes_n,
        poses=poses,
        torsos=torsos,
        features=features,
        frame_paths=[str(p) for p in frame_paths],
        condition_paths=condition_paths,
        template=template,
        train_idx=train_idx,
        val_idx=val_idx,
    )


def load_processed(dataset_dir) -> list:
    """Read back the artifacts written by :func:`process_clip`."""
    from .template import load_template

    dataset_dir = Path(dataset_dir)
    if (dataset_dir / "processed").is_dir():
        candidates = [dataset_dir]
    elif dataset_dir.is_dir():
        candidates = sorted(d for d in dataset_dir.iterdir() if d.is_dir() and (d / "processed").is_dir())
    else:
        candidates = []
    clips = []
    for clip_dir in candidates:
        out = clip_dir / "processed"
        split = io.read_json(out / "split.json")
        clips.append(
            ClipData(
                name=clip_dir.name,
                faces=io.read_landmarks(out / "face.bin"),
                mouths=io.read_landmarks(out / "mouth.bin"),
                eyes=io.read_landmarks(out / "eye.bin"),
                poses=io.read_poses(out / "pose.bin"),
                torsos=io.read_landmarks(out / "torso.bin"),
                features=io.read_features(out / "features.bin")[0],
                frame_paths=[str(p) for p in sorted((clip_dir / "frames").glob("*.png"))],
                condition_paths=[str(p) for p in sorted((out / "conditions").glob("*.png"))],
                template=load_template(out / "template.npz"),
                train_idx=np.asarray(split["train"], dtype=int),
                val_idx=np.asarray(split["val"], dtype=int),
            )
        )
    return clips


def build_dataset(dataset_dir, fps: float = 25.0, extractor=None, camera=None, seed: int = 0, val_fraction: float = 0.2) -> list:
    """Process every clip directory under ``dataset_dir``.

    A directory counts as a clip when it contains frames/ and audio.wav.
    """
    dataset_dir = Path(dataset_dir)
    clip_dirs = sorted(
        d for d in dataset_dir.iterdir() if d.is_dir() and (d / "frames").is_dir() and (d / "audio.wav").exists()
    ) if dataset_dir.is_dir() else []
    if (dataset_dir / "frames").is_dir() and (dataset_dir / "audio.wav").exists():
        clip_dirs = [dataset_dir]
    if not clip_dirs:
        raise DataError(f"no clip directories found under {dataset_dir}")
    return [
        process_clip(d, fps=fps, extractor=extractor, camera=camera, seed=seed + i, val_fraction=val_fraction)
        for i, d in enumerate(clip_dirs)
    ]
