"""Orchestration: three training stages, sliding-window inference from
audio to rendered frames, and metric reports.

Long audio is processed in overlapping windows (default 300 frames,
stride 150); overlapping predictions are merged with a linear crossfade.
"""

from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np
import torch

from . import io
from .audio import LogMelExtractor, extract_features, load_wav
from .checkpoint import CheckpointArchive, load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .errors import (
    ConfigError,
    DataError,
    DatasetEmpty,
    InconsistentWindows,
    MissingStream,
    NonFiniteLoss,
)
from .face_composer import FaCoNet, PointDiscriminator, train_step as faco_train_step
from .geometry import HeadPose, project, to_camera
from .metrics import diversity, lmd, lmd_v, mouth_iou, tcm, zero_flow
from .motion_net import STREAM_SHAPES, ModaNet, MotionOutput, loss_total
from .preprocess import ClipData, load_processed
from .renderer import (
    MultiScaleDiscriminator,
    RandomConvPerceptual,
    UNetGenerator,
    assemble_condition,
    loss_disc_multiscale,
    mesh_edges,
    mouth_mask,
    renderer_losses,
    tpe,
)
from .template import load_template

STREAMS = tuple(STREAM_SHAPES)


# -- sliding windows -----------------------------------------------------------

def sliding_windows(total: int, window: int = 300, stride: int = 150) -> list:
    """Cover [0, total) with fixed-size windows; the last one is
    right-aligned when total is off the stride grid."""
    if total < 1:
        raise DataError("need at least one frame")
    if window < 1 or stride < 1 or stride > window:
        raise ConfigError("need 1 <= stride <= window")
    if total <= window:
        return [(0, total)]
    starts = list(range(0, total - window, stride))
    starts.append(total - window)
    return [(s, s + window) for s in dict.fromkeys(starts)]


def blend_windows(outputs: list, windows: list) -> dict:
    """Merge per-window stream dicts into full-length arrays, crossfading
    linearly over each overlap (later window's weight ramps 0 -> 1)."""
    if len(outputs) != len(windows) or not windows:
        raise InconsistentWindows(f"{len(outputs)} outputs for {len(windows)} windows")
    for out, (start, end) in zip(outputs, windows):
        for name in STREAMS:
            if name not in out or len(out[name]) != end - start:
                raise InconsistentWindows(f"window ({start},{end}) missing or misshaped stream {name!r}")
    total = windows[-1][1]
    merged = {
        name: np.zeros((total, *STREAM_SHAPES[name]), dtype=np.float64) for name in STREAMS
    }
    prev_end = 0
    for out, (start, end) in zip(outputs, windows):
        if start > prev_end:
            raise InconsistentWindows(f"gap before window ({start},{end})")
        overlap = prev_end - start
        for name in STREAMS:
            chunk = np.asarray(out[name], dtype=np.float64)
            if overlap > 0:
                alpha = (np.arange(overlap) / overlap).reshape(overlap, *([1] * (chunk.ndim - 1)))
                merged[name][start:prev_end] = (1 - alpha) * merged[name][start:prev_end] + alpha * chunk[:overlap]
            merged[name][prev_end:end] = chunk[overlap:]
        prev_end = end
    return merged


# -- shared training helpers ----------------------------------------------------

def _clip_displacements(clip: ClipData) -> dict:
    t = clip.template
    return {
        "mouth": clip.mouths - t.mouth_ref,
        "pose": clip.poses - t.pose_ref,
        "eye": clip.eyes - t.eye_ref,
        "torso": clip.torsos - t.torso_ref,
    }


class _LossLog:
    def __init__(self, path: Path, resume: bool):
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not (resume and path.exists())
        self.fh = open(path, "w" if fresh else "a", newline="")
        self.writer = csv.writer(self.fh)
        if fresh:
            self.writer.writerow(["step", "split", "loss"])

    def add(self, step: int, split: str, loss: float):
        self.writer.writerow([step, split, f"{loss:.6f}"])

    def close(self):
        self.fh.close()


def _finite_or_raise(loss: torch.Tensor, step: int, stage: str):
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"{stage} loss became {loss.item()} at step {step}")


def _save_pair(out_dir: Path, stage: str, cfg_dict: dict, step: int, state: dict, val_loss: float, best: dict):
    last = CheckpointArchive(stage=stage, config=cfg_dict, step=step, state=state, metrics={"val_loss": val_loss})
    save_checkpoint(out_dir / f"{stage}_last.pt", last)
    if best.get("loss") is None or val_loss <= best["loss"]:
        best["loss"] = val_loss
        save_checkpoint(out_dir / f"{stage}_best.pt", CheckpointArchive(
            stage=stage, config=cfg_dict, step=step, state=state, metrics={"val_loss": val_loss}))
    return last


def _maybe_resume(out_dir: Path, stage: str, resume: bool) -> tuple[int, dict | None]:
    path = out_dir / f"{stage}_last.pt"
    if resume and path.exists():
        archive = load_checkpoint(path)
        return archive.step, archive.state
    return 0, None


# -- stage trainers --------------------------------------------------------------

def _train_moda(clips: list, cfg: PipelineConfig, out_dir: Path, resume: bool, epochs: int) -> CheckpointArchive:
    net = ModaNet(cfg.moda)
    step, state = _maybe_resume(out_dir, "moda", resume)
    if state is not None:
        net.load_state_dict(state["net"])
    opt = torch.optim.Adam(net.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    log = _LossLog(out_dir / "moda_losses.csv", resume)
    cfg_dict = cfg.to_dict()["moda"]

    items = []
    for ci, clip in enumerate(clips):
        train_idx = clip.train_idx if len(clip.train_idx) else clip.val_idx
        lo, hi = int(train_idx.min()), int(train_idx.max()) + 1
        for start, end in sliding_windows(hi - lo, cfg.window, cfg.stride):
            items.append((ci, lo + start, lo + end))
    deltas = [_clip_displacements(c) for c in clips]
    rng = np.random.default_rng(cfg.seed)
    best: dict = {"loss": None}
    archive = None
    for _ in range(epochs):
        order = rng.permutation(len(items))
        for idx in order:
            ci, start, end = items[idx]
            clip = clips[ci]
            gt = MotionOutput.from_arrays({k: v[start:end] for k, v in deltas[ci].items()})
            out = net(clip.features[start:end], clip.template.face, mode="train")
            loss = loss_total(out.motion, gt, out.moments, cfg.moda.lambdas)
            _finite_or_raise(loss, step, "moda")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            log.add(step, "train", float(loss.detach()))
        val = _validate_moda(net, clips, deltas, cfg)
        log.add(step, "val", val)
        archive = _save_pair(out_dir, "moda", cfg_dict, step, {"net": net.state_dict()}, val, best)
    log.close()
    return load_checkpoint(out_dir / "moda_best.pt") if archive else None


def _validate_moda(net: ModaNet, clips: list, deltas: list, cfg: PipelineConfig) -> float:
    losses = []
    with torch.no_grad():
        for ci, clip in enumerate(clips):
            idx = clip.val_idx if len(clip.val_idx) else clip.train_idx
            lo, hi = int(idx.min()), int(idx.max()) + 1
            gt = MotionOutput.from_arrays({k: v[lo:hi] for k, v in deltas[ci].items()})
            out = net(clip.features[lo:hi], clip.template.face, mode="train", seed=0)
            losses.append(float(loss_total(out.motion, gt, out.moments, cfg.moda.lambdas)))
    return float(np.mean(losses))


def _faco_tensors(clips: list, split: str):
    subjects, mouths, eyes, faces = [], [], [], []
    for clip in clips:
        idx = getattr(clip, f"{split}_idx")
        if not len(idx):
            continue
        subjects.append(np.broadcast_to(clip.template.face, (len(idx), 478, 3)))
        mouths.append(clip.mouths[idx])
        eyes.append(clip.eyes[idx])
        faces.append(clip.faces[idx])
    if not subjects:
        return None
    to_t = lambda arrs: torch.as_tensor(np.concatenate(arrs), dtype=torch.float32)
    return {"subject": to_t(subjects), "mouth": to_t(mouths), "eye": to_t(eyes), "face": to_t(faces)}


def _train_faco(clips: list, cfg: PipelineConfig, out_dir: Path, resume: bool, epochs: int) -> CheckpointArchive:
    net = FaCoNet(cfg.faco)
    disc = PointDiscriminator(cfg.faco.d)
    step, state = _maybe_resume(out_dir, "faco", resume)
    if state is not None:
        net.load_state_dict(state["net"])
        disc.load_state_dict(state["disc"])
    gen_opt = torch.optim.Adam(net.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    disc_opt = torch.optim.Adam(disc.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    log = _LossLog(out_dir / "faco_losses.csv", resume)
    cfg_dict = cfg.to_dict()["faco"]

    train = _faco_tensors(clips, "train") or _faco_tensors(clips, "val")
    val = _faco_tensors(clips, "val") or train
    n = train["face"].shape[0]
    batch = min(cfg.batch_sizes[1], n)
    rng = np.random.default_rng(cfg.seed)
    best: dict = {"loss": None}
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = order[lo : lo + batch]
            losses = faco_train_step(
                {k: v[sel] for k, v in train.items()}, net, disc, gen_opt, disc_opt, l1_weight=cfg.faco.l1_weight
            )
            step += 1
            log.add(step, "train", losses["gen"])
        with torch.no_grad():
            val_loss = float(torch.mean(torch.abs(net(val["subject"], val["mouth"], val["eye"]) - val["face"])))
        log.add(step, "val", val_loss)
        state = {"net": net.state_dict(), "disc": disc.state_dict()}
        _save_pair(out_dir, "faco", cfg_dict, step, state, val_loss, best)
    log.close()
    return load_checkpoint(out_dir / "faco_best.pt")


def _load_image(path, resolution: int) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"cannot read image {path}")
    if img.shape[:2] != (resolution, resolution):
        img = cv2.resize(img, (resolution, resolution), interpolation=cv2.INTER_AREA)
    return img.astype(np.float32) / 127.5 - 1.0


def _condition_cache_path(drawing_path: str, res: int, frame: int) -> Path | None:
    cache_dir = os.environ.get("MODA_CACHE")
    if not cache_dir:
        return None
    digest = hashlib.sha256(Path(drawing_path).read_bytes() + f"|{res}|{frame}".encode()).hexdigest()
    return Path(cache_dir) / "conditions" / f"{digest}.bin"


def _renderer_records(clips: list, cfg: PipelineConfig, split: str):
    res = cfg.renderer.resolution
    conds, targets, masks = [], [], []
    for clip in clips:
        idx = getattr(clip, f"{split}_idx")
        if not len(idx):
            continue
        ref_idx = int(clip.train_idx[0]) if len(clip.train_idx) else 0
        reference = _load_image(clip.frame_paths[ref_idx], res)
        for i in idx:
            cached = _condition_cache_path(clip.condition_paths[i], res, int(i))
            if cached is not None and cached.exists():
                conds.append(io.read_condition_cache(cached))
                targets.append(np.moveaxis(_load_image(clip.frame_paths[i], res), -1, 0))
                pose = HeadPose.from_vector(clip.poses[i])
                ring = project(to_camera(clip.mouths[i][:20] / clip.template.scale, pose), cfg.camera)
                masks.append(mouth_mask(ring, res, res))
                continue
            drawing = cv2.imread(clip.condition_paths[i], cv2.IMREAD_GRAYSCALE)
            if drawing is None:
                raise DataError(f"cannot read condition {clip.condition_paths[i]}")
            if drawing.shape != (res, res):
                drawing = cv2.resize(drawing, (res, res), interpolation=cv2.INTER_AREA)
            cond = np.concatenate(
                [
                    (drawing.astype(np.float32) / 127.5 - 1.0)[None],
                    np.moveaxis(reference, -1, 0),
                    np.broadcast_to(tpe(int(i)).values.astype(np.float32)[:, None, None], (12, res, res)),
                ],
                axis=0,
            )
            if cached is not None:
                cached.parent.mkdir(parents=True, exist_ok=True)
                io.write_condition_cache(cached, cond)
                cond = cond.astype(np.float16).astype(np.float32)  # cold/warm runs see identical values
            conds.append(cond)
            targets.append(np.moveaxis(_load_image(clip.frame_paths[i], res), -1, 0))
            pose = HeadPose.from_vector(clip.poses[i])
            ring = project(to_camera(clip.mouths[i][:20] / clip.template.scale, pose), cfg.camera)
            masks.append(mouth_mask(ring, res, res))
    if not conds:
        return None
    return (
        torch.as_tensor(np.stack(conds), dtype=torch.float32),
        torch.as_tensor(np.stack(targets), dtype=torch.float32),
        torch.as_tensor(np.stack(masks), dtype=torch.float32)[:, None],
    )


def _train_renderer(clips: list, cfg: PipelineConfig, out_dir: Path, resume: bool, epochs: int) -> CheckpointArchive:
    gen = UNetGenerator(cfg.renderer)
    disc = MultiScaleDiscriminator(cfg.renderer)
    perceptual = RandomConvPerceptual()
    step, state = _maybe_resume(out_dir, "renderer", resume)
    if state is not None:
        gen.load_state_dict(state["net"])
        disc.load_state_dict(state["disc"])
    gen_opt = torch.optim.Adam(gen.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    disc_opt = torch.optim.Adam(disc.parameters(), lr=cfg.optimizer.lr, betas=cfg.optimizer.betas)
    log = _LossLog(out_dir / "renderer_losses.csv", resume)
    cfg_dict = cfg.to_dict()["renderer"]

    train = _renderer_records(clips, cfg, "train") or _renderer_records(clips, cfg, "val")
    val = _renderer_records(clips, cfg, "val") or train
    conds, targets, masks = train
    n = conds.shape[0]
    batch = min(cfg.batch_sizes[2], n)
    rng = np.random.default_rng(cfg.seed)
    best: dict = {"loss": None}
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = order[lo : lo + batch]
            cond, target, mask = conds[sel], targets[sel], masks[sel]
            fake = gen(cond)

            disc_opt.zero_grad()
            real_scores, _ = disc(target, cond)
            fake_scores, _ = disc(fake.detach(), cond)
            d_loss = loss_disc_multiscale(real_scores, fake_scores)
            _finite_or_raise(d_loss, step, "renderer-disc")
            d_loss.backward()
            disc_opt.step()

            gen_opt.zero_grad()
            fake_scores, fake_feats = disc(fake, cond)
            with torch.no_grad():
                _, real_feats = disc(target, cond)
            losses = renderer_losses(fake, target, mask, fake_scores, fake_feats, real_feats, cfg.renderer, perceptual)
            _finite_or_raise(losses["total"], step, "renderer")
            losses["total"].backward()
            gen_opt.step()
            step += 1
            log.add(step, "train", float(losses["total"].detach()))
        with torch.no_grad():
            val_pred = gen(val[0])
            val_loss = float(torch.mean(torch.abs(val_pred - val[1])))
        log.add(step, "val", val_loss)
        state = {"net": gen.state_dict(), "disc": disc.state_dict()}
        _save_pair(out_dir, "renderer", cfg_dict, step, state, val_loss, best)
    log.close()
    return load_checkpoint(out_dir / "renderer_best.pt")


def train(stage: str, dataset_dir, cfg: PipelineConfig, out_dir, resume: bool = False, epochs: int | None = None) -> CheckpointArchive:
    """Train one stage on a preprocessed dataset; writes best/last
    checkpoints (selected by validation loss) and a loss-curve CSV."""
    trainers = {"moda": (_train_moda, 0), "faco": (_train_faco, 1), "renderer": (_train_renderer, 2)}
    if stage not in trainers:
        raise ConfigError(f"unknown stage {stage!r}")
    clips = load_processed(dataset_dir)
    if not clips or all(c.frames == 0 for c in clips):
        raise DatasetEmpty(f"no processed clips under {dataset_dir}")
    torch.manual_seed(cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fn, stage_idx = trainers[stage]
    return fn(clips, cfg, out_dir, resume, epochs if epochs is not None else cfg.epochs[stage_idx])


# -- inference -------------------------------------------------------------------

def generate_motion(net: ModaNet, features: np.ndarray, subject_face: np.ndarray, cfg: PipelineConfig, seed: int, mode: str = "sample") -> dict:
    """Windowed motion generation with crossfaded overlaps; each window
    samples with its own seed derived from the base seed."""
    total = features.shape[0]
    windows = sliding_windows(total, cfg.window, cfg.stride)
    outputs = []
    with torch.no_grad():
        for wi, (start, end) in enumerate(windows):
            out = net(features[start:end], subject_face, mode=mode, seed=seed + wi)
            outputs.append(out.motion.numpy())
    return blend_windows(outputs, windows)


def infer(audio_path, template_path, checkpoint_dir, reference_path, out_dir, cfg: PipelineConfig, seed: int = 0) -> dict:
    """Full pipeline: audio -> motion -> dense landmarks -> rendered frames.

    Writes PNG frames, the motion dump (flat float32 + JSON sidecars), and
    a run manifest. Deterministic for a fixed seed.
    """
    checkpoint_dir = Path(checkpoint_dir)
    archives = {}
    for stage in ("moda", "faco", "renderer"):
        best = checkpoint_dir / f"{stage}_best.pt"
        last = checkpoint_dir / f"{stage}_last.pt"
        archives[stage] = load_checkpoint(best if best.exists() else last)

    template = load_template(template_path)
    res = cfg.renderer.resolution
    if tuple(cfg.camera.image_size) != (res, res):
        raise ConfigError(f"camera image size {cfg.camera.image_size} must match renderer resolution {res}")

    net = ModaNet(cfg.moda)
    net.load_state_dict(archives["moda"].state["net"])
    composer = FaCoNet(cfg.faco)
    composer.load_state_dict(archives["faco"].state["net"])
    gen = UNetGenerator(cfg.renderer)
    gen.load_state_dict(archives["renderer"].state["net"])

    waveform = load_wav(audio_path)
    feats = extract_features(waveform, cfg.fps, LogMelExtractor(n_mels=cfg.moda.audio_dim))
    deltas = generate_motion(net, feats.features, template.face, cfg, seed)
    t_frames = feats.frames

    motion = {
        "mouth": template.mouth_ref + deltas["mouth"],
        "eye": template.eye_ref + deltas["eye"],
        "pose": template.pose_ref + deltas["pose"],
        "torso": template.torso_ref + deltas["torso"],
    }
    with torch.no_grad():
        faces = composer(
            torch.as_tensor(np.broadcast_to(template.face, (t_frames, 478, 3)).copy(), dtype=torch.float32),
            torch.as_tensor(motion["mouth"], dtype=torch.float32),
            torch.as_tensor(motion["eye"], dtype=torch.float32),
        ).numpy().astype(np.float64)

    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    (out_dir / "motion").mkdir(parents=True, exist_ok=True)
    io.write_landmarks(out_dir / "motion" / "mouth.bin", motion["mouth"])
    io.write_landmarks(out_dir / "motion" / "eye.bin", motion["eye"])
    io.write_landmarks(out_dir / "motion" / "torso.bin", motion["torso"])
    io.write_landmarks(out_dir / "motion" / "face.bin", faces)
    io.write_poses(out_dir / "motion" / "pose.bin", motion["pose"])

    reference = _load_image(reference_path, res)
    ref_pose = HeadPose.from_vector(template.pose_ref)
    edges = mesh_edges(project(to_camera(template.face / template.scale, ref_pose), cfg.camera))
    for t in range(t_frames):
        pose = HeadPose.from_vector(motion["pose"][t])
        face_2d = project(to_camera(faces[t] / template.scale, pose), cfg.camera)
        torso_2d = project(motion["torso"][t], cfg.camera)
        cond = assemble_condition(face_2d, torso_2d, reference, t, cfg.renderer, edges=edges)
        with torch.no_grad():
            frame = gen(cond.to_tensor()[None])[0].permute(1, 2, 0).numpy()
        cv2.imwrite(str(out_dir / "frames" / f"{t:06d}.png"), np.clip((frame + 1.0) * 127.5, 0, 255).astype(np.uint8))

    manifest = {
        "frames": t_frames,
        "fps": cfg.fps,
        "seed": seed,
        "audio": str(audio_path),
        "windows": sliding_windows(t_frames, cfg.window, cfg.stride),
        "checkpoint_steps": {k: v.step for k, v in archives.items()},
    }
    io.write_json(out_dir / "manifest.json", manifest)
    return manifest


# -- evaluation -------------------------------------------------------------------

def _read_motion_dir(path: Path) -> dict:
    motion_dir = path / "motion"
    if not (motion_dir / "mouth.bin").exists():
        raise MissingStream(f"{path} has no motion/mouth.bin")
    out = {"mouth": io.read_landmarks(motion_dir / "mouth.bin")}
    for name in ("eye", "torso", "face"):
        if (motion_dir / f"{name}.bin").exists():
            out[name] = io.read_landmarks(motion_dir / f"{name}.bin")
    if (motion_dir / "pose.bin").exists():
        out["pose"] = io.read_poses(motion_dir / "pose.bin")
    return out


def _read_frames(path: Path) -> np.ndarray | None:
    frame_dir = path / "frames"
    files = sorted(frame_dir.glob("*.png")) if frame_dir.is_dir() else []
    if not files:
        return None
    frames = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise DataError(f"cannot read frame {f}")
        frames.append(img.astype(np.float64) / 255.0)
    return np.stack(frames)


def _read_flows(path: Path, count: int, shape) -> np.ndarray:
    flow_dir = path / "flows"
    files = sorted(flow_dir.glob("*.bin")) if flow_dir.is_dir() else []
    if len(files) >= count:
        return np.stack([io.read_flow(f) for f in files[:count]])
    return np.stack([zero_flow(*shape) for _ in range(count)])


def evaluate(pred_dir, gt_dir, external_scores=None) -> dict:
    """Metric report comparing an inference output directory to ground
    truth: mouth distances, mouth IoU, temporal consistency, diversity.

    Externally computed scores (e.g. audio-sync confidence, no-reference
    image quality) are merged in from a JSON mapping when provided.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred = _read_motion_dir(pred_dir)
    gt = _read_motion_dir(gt_dir)
    t = min(pred["mouth"].shape[0], gt["mouth"].shape[0])
    report = {
        "frames": t,
        "lmd": lmd(pred["mouth"][:t], gt["mouth"][:t]),
        "lmd_v": lmd_v(pred["mouth"][:t], gt["mouth"][:t]) if t >= 2 else None,
        "mouth_iou": mouth_iou(pred["mouth"][:t, :20, :2], gt["mouth"][:t, :20, :2]),
        "units": "normalized canonical (inter-ocular distance ~ 1)",
    }

    pred_frames, gt_frames = _read_frames(pred_dir), _read_frames(gt_dir)
    if pred_frames is not None and gt_frames is not None:
        n = min(len(pred_frames), len(gt_frames))
        if n >= 2:
            shape = gt_frames.shape[1:3]
            gt_flows = _read_flows(gt_dir, n - 1, shape)
            pred_flows = _read_flows(pred_dir, n - 1, shape)
            report["tcm"] = tcm(gt_frames[:n], pred_frames[:n], gt_flows, pred_flows)

    sample_dirs = sorted(p for p in (pred_dir / "samples").glob("*") if p.is_dir()) if (pred_dir / "samples").is_dir() else []
    if len(sample_dirs) >= 2:
        stacks = [_read_motion_dir(d)["mouth"] for d in sample_dirs]
        t_min = min(len(s) for s in stacks)
        report["diversity"] = diversity(np.stack([s[:t_min] for s in stacks]))

    if external_scores:
        ext = io.read_json(external_scores) if not isinstance(external_scores, dict) else external_scores
        report["external"] = ext
    return report


def format_report(report: dict) -> str:
    lines = ["metric                value", "-" * 34]
    for key, value in report.items():
        if isinstance(value, float):
            lines.append(f"{key:<20}  {value:.6f}")
        elif isinstance(value, dict):
            for k, v in value.items():
                lines.append(f"{key}.{k:<14}  {v}")
        else:
            lines.append(f"{key:<20}  {value}")
    return "\n".join(lines) + "\n"
