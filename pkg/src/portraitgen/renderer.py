"""Temporally-guided portrait renderer.

A U-Net generator turns a 16-channel condition stack (landmark/torso
drawing + reference image + 12 temporal-encoding planes) into a frame.
The temporal encoding is 6 sin/cos pairs of the frame index broadcast as
constant image planes; it carries the temporal signal, so frames can be
rendered independently. Training uses a multi-scale patch discriminator
with a least-squares objective plus color / mouth / perceptual / feature-
matching terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.spatial import Delaunay, QhullError

from .errors import ConfigError, EmptyReference, ShapeMismatch

TPE_DIM = 12
COND_CHANNELS = 1 + 3 + TPE_DIM


@dataclass(frozen=True)
class TemporalEncoding:
    """12 sin/cos values of a frame index; every entry is in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(TPE_DIM)
        if np.any(np.abs(vals) > 1.0 + 1e-12):
            raise ShapeMismatch("temporal encoding values must lie in [-1, 1]")
        object.__setattr__(self, "values", vals)


def tpe(t: int) -> TemporalEncoding:
    """Temporal encoding of frame t: (sin, cos) of t * 2^i / 100, i = 0..5."""
    if t < 0:
        raise ShapeMismatch("frame index must be >= 0")
    vals = np.empty(TPE_DIM)
    for i in range(6):
        phase = t * (2.0**i) / 100.0
        vals[2 * i] = math.sin(phase)
        vals[2 * i + 1] = math.cos(phase)
    return TemporalEncoding(values=vals)


@dataclass(frozen=True)
class RendererConfig:
    """Resolution, generator/discriminator widths, and loss weights."""

    resolution: int = 256
    enc_channels: tuple = (64, 128, 256, 512, 512, 512, 512, 512)
    lambda_color: float = 50.0
    lambda_mouth: float = 100.0
    lambda_perceptual: float = 10.0
    lambda_fm: float = 1.0
    disc_scales: int = 2
    disc_base_channels: int = 64

    def __post_init__(self):
        res = self.resolution
        if res < 64 or res & (res - 1) != 0:
            raise ConfigError("resolution must be a power of two >= 64")
        for w in (self.lambda_color, self.lambda_mouth, self.lambda_perceptual, self.lambda_fm):
            if w < 0:
                raise ConfigError("loss weights must be non-negative")
        if self.disc_scales < 1:
            raise ConfigError("need at least one discriminator scale")

    @property
    def levels(self) -> int:
        """Stride-2 encoder levels; the bottleneck is 1x1 spatial."""
        return int(math.log2(self.resolution))

    def level_channels(self) -> tuple:
        ch = list(self.enc_channels)
        while len(ch) < self.levels:
            ch.append(ch[-1])
        return tuple(ch[: self.levels])


@dataclass(frozen=True)
class ConditionFrame:
    """Renderer input for one frame: drawing, reference, TPE, frame index.

    ``condition`` is [H, W] and ``reference`` [H, W, 3], both in [-1, 1].
    """

    condition: np.ndarray
    reference: np.ndarray
    tpe: TemporalEncoding
    frame_index: int

    def __post_init__(self):
        cond = np.asarray(self.condition, dtype=np.float32)
        ref = np.asarray(self.reference, dtype=np.float32)
        if cond.ndim != 2:
            raise ShapeMismatch(f"condition raster must be [H, W], got {cond.shape}")
        if ref.shape != (*cond.shape, 3):
            raise ShapeMismatch(f"reference must be [H, W, 3] matching the condition, got {ref.shape}")
        object.__setattr__(self, "condition", cond)
        object.__setattr__(self, "reference", ref)

    def to_tensor(self) -> torch.Tensor:
        """Stack to [16, H, W]: condition, reference, 12 constant TPE planes."""
        h, w = self.condition.shape
        planes = [self.condition[None], np.moveaxis(self.reference, -1, 0)]
        planes.append(np.broadcast_to(self.tpe.values.astype(np.float32)[:, None, None], (TPE_DIM, h, w)))
        return torch.from_numpy(np.ascontiguousarray(np.concatenate(planes, axis=0)))


def mesh_edges(points_2d: np.ndarray) -> np.ndarray:
    """Unique Delaunay edges of a 2D point set, [E, 2] index pairs."""
    pts = np.asarray(points_2d, dtype=np.float64)
    try:
        tri = Delaunay(pts)
    except (QhullError, ValueError):
        return np.zeros((0, 2), dtype=np.int64)
    edges = set()
    for simplex in tri.simplices:
        for a, b in ((0, 1), (1, 2), (0, 2)):
            edges.add(tuple(sorted((int(simplex[a]), int(simplex[b])))))
    return np.asarray(sorted(edges), dtype=np.int64)


def _draw_polyline(canvas: np.ndarray, pts: np.ndarray, closed: bool = False):
    cv2.polylines(canvas, [np.round(pts).astype(np.int32)], closed, 255, 1, cv2.LINE_AA)


def assemble_condition(
    face_2d: np.ndarray,
    torso_2d: np.ndarray,
    reference: np.ndarray,
    t: int,
    cfg: RendererConfig,
    edges: np.ndarray | None = None,
) -> ConditionFrame:
    """Rasterize projected face-mesh edges and the torso polylines into the
    condition drawing, paired with the reference image and TPE planes.

    Points outside the canvas are clipped by the rasterizer. ``edges``
    overrides the per-frame Delaunay topology (e.g. with one fixed
    template triangulation for temporal stability).
    """
    if reference is None:
        raise EmptyReference("condition assembly requires a reference image")
    face_2d = np.asarray(face_2d, dtype=np.float64)
    torso_2d = np.asarray(torso_2d, dtype=np.float64)
    if face_2d.shape != (478, 2):
        raise ShapeMismatch(f"face points must be [478, 2], got {face_2d.shape}")
    if torso_2d.shape != (18, 2):
        raise ShapeMismatch(f"torso points must be [18, 2], got {torso_2d.shape}")
    reference = np.asarray(reference, dtype=np.float32)
    h, w = reference.shape[:2]

    canvas = np.zeros((h, w), dtype=np.uint8)
    if edges is None:
        edges = mesh_edges(face_2d)
    for a, b in edges:
        _draw_polyline(canvas, face_2d[[a, b]])
    _draw_polyline(canvas, torso_2d[:9])
    _draw_polyline(canvas, torso_2d[9:])

    condition = canvas.astype(np.float32) / 255.0 * 2.0 - 1.0
    return ConditionFrame(condition=condition, reference=reference, tpe=tpe(t), frame_index=t)


def mouth_mask(mouth_ring_2d: np.ndarray, height: int, width: int, dilate_px: int = 8) -> np.ndarray:
    """Binary mouth-region mask: filled outer-lip polygon dilated by N px."""
    ring = np.asarray(mouth_ring_2d, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[0] < 3 or ring.shape[1] != 2:
        raise ShapeMismatch(f"mouth ring must be [>=3, 2], got {ring.shape}")
    mask = np.zeros((height, width), dtype=np.uint8)
    cv2.fillPoly(mask, [np.round(ring).astype(np.int32)], 1)
    if dilate_px > 0:
        k = 2 * dilate_px + 1
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (k, k))
        mask = cv2.dilate(mask, kernel)
    return mask.astype(np.float32)


# -- generator ----------------------------------------------------------------

def _norm(ch: int, spatial: int = 2) -> nn.Module:
    # normalization over a single value per group is degenerate; the 1x1
    # bottleneck level runs without it
    if spatial <= 1:
        return nn.Identity()
    groups = 8 if ch % 8 == 0 else 1
    return nn.GroupNorm(groups, ch)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, spatial: int = 2):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1),
            _norm(ch, spatial),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch, 3, padding=1),
            _norm(ch, spatial),
        )

    def forward(self, x):
        return x + self.body(x)


class UNetGenerator(nn.Module):
    """Encoder of stride-2 conv + residual blocks down to a 1x1 bottleneck,
    mirrored decoder with nearest upsampling and per-level skip merges."""

    def __init__(self, cfg: RendererConfig = RendererConfig(), in_channels: int = COND_CHANNELS):
        super().__init__()
        self.cfg = cfg
        channels = cfg.level_channels()
        self.encoders = nn.ModuleList()
        prev = in_channels
        spatial = cfg.resolution
        for ch in channels:
            spatial //= 2
            self.encoders.append(
                nn.Sequential(
                    nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                    _norm(ch, spatial),
                    nn.LeakyReLU(0.2),
                    ResidualBlock(ch, spatial),
                )
            )
            prev = ch
        self.decoders = nn.ModuleList()
        for i in reversed(range(len(channels) - 1)):
            merged = channels[i + 1] + channels[i]
            out_ch = channels[i]
            self.decoders.append(
                nn.Sequential(
                    nn.Conv2d(merged, out_ch, 3, padding=1),
                    _norm(out_ch),
                    nn.LeakyReLU(0.2),
                    ResidualBlock(out_ch),
                )
            )
        self.final = nn.Conv2d(channels[0], 3, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeMismatch(f"generator input must be [B, C, H, W], got {tuple(x.shape)}")
        if x.shape[2] != x.shape[3] or x.shape[2] != self.cfg.resolution:
            raise ShapeMismatch(f"generator configured for {self.cfg.resolution}^2 input, got {tuple(x.shape[2:])}")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        h = skips[-1]
        for dec, skip in zip(self.decoders, reversed(skips[:-1])):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = dec(torch.cat([h, skip], dim=1))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        return torch.tanh(self.final(h))


def generate_frame(condition: ConditionFrame, generator: UNetGenerator) -> np.ndarray:
    """Render one frame from an assembled condition; returns [H, W, 3] in [-1, 1]."""
    with torch.no_grad():
        batch = condition.to_tensor()[None].to(next(generator.parameters()).dtype)
        out = generator(batch)[0]
    return out.permute(1, 2, 0).cpu().numpy()


# -- discriminator ------------------------------------------------------------

class PatchDiscriminator(nn.Module):
    """Patch classifier returning a score map plus per-layer features."""

    def __init__(self, in_channels: int, base: int = 64):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                nn.Sequential(nn.Conv2d(in_channels, base, 4, stride=2, padding=1), nn.LeakyReLU(0.2)),
                nn.Sequential(nn.Conv2d(base, base * 2, 4, stride=2, padding=1), _norm(base * 2), nn.LeakyReLU(0.2)),
                nn.Sequential(nn.Conv2d(base * 2, base * 4, 4, stride=2, padding=1), _norm(base * 4), nn.LeakyReLU(0.2)),
            ]
        )
        self.head = nn.Conv2d(base * 4, 1, 3, padding=1)

    def forward(self, x: torch.Tensor):
        features = []
        h = x
        for layer in self.layers:
            h = layer(h)
            features.append(h)
        return self.head(h), features


class MultiScaleDiscriminator(nn.Module):
    """Independent patch discriminators on 2x-downsampled copies of the
    input; conditional by default (sees the condition stack + image)."""

    def __init__(self, cfg: RendererConfig = RendererConfig(), image_channels: int = 3, cond_channels: int = COND_CHANNELS):
        super().__init__()
        self.cond_channels = cond_channels
        in_ch = image_channels + cond_channels
        self.discs = nn.ModuleList(PatchDiscriminator(in_ch, base=cfg.disc_base_channels) for _ in range(cfg.disc_scales))

    def forward(self, image: torch.Tensor, condition: torch.Tensor):
        if image.shape[0] != condition.shape[0] or image.shape[2:] != condition.shape[2:]:
            raise ShapeMismatch("image and condition batches must align")
        x = torch.cat([condition, image], dim=1)
        scores, features = [], []
        for i, disc in enumerate(self.discs):
            if i > 0:
                x = F.avg_pool2d(x, 2)
            score, feats = disc(x)
            scores.append(score)
            features.append(feats)
        return scores, features


def loss_disc_multiscale(real_scores: list, fake_scores: list) -> torch.Tensor:
    """LSGAN objective for the discriminator, averaged over scales."""
    terms = [torch.mean((r - 1.0) ** 2) + torch.mean(f**2) for r, f in zip(real_scores, fake_scores)]
    return sum(terms) / len(terms)


def renderer_losses(
    pred: torch.Tensor,
    target: torch.Tensor,
    mouth: torch.Tensor,
    fake_scores: list,
    fake_features: list,
    real_features: list,
    cfg: RendererConfig,
    perceptual=None,
) -> dict:
    """Generator losses: LSGAN + weighted color, mouth, perceptual, and
    feature-matching terms. Returns every term plus their weighted total."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if mouth.shape[-2:] != pred.shape[-2:]:
        raise ShapeMismatch("mouth mask spatial dims must match the images")

    gan = sum(torch.mean((s - 1.0) ** 2) for s in fake_scores) / len(fake_scores)
    color = torch.mean(torch.abs(pred - target))
    mouth_term = torch.mean(torch.abs(mouth * pred - mouth * target))
    if perceptual is not None:
        pred_feats = perceptual(pred)
        target_feats = perceptual(target)
        perc = sum(torch.mean(torch.abs(a - b)) for a, b in zip(pred_feats, target_feats))
    else:
        perc = pred.new_zeros(())
    fm = pred.new_zeros(())
    for fake_scale, real_scale in zip(fake_features, real_features):
        for y, y_star in zip(fake_scale, real_scale):
            fm = fm + torch.mean(torch.abs(y - y_star))
    fm = fm / max(len(fake_features), 1)

    total = (
        gan
        + cfg.lambda_color * color
        + cfg.lambda_mouth * mouth_term
        + cfg.lambda_perceptual * perc
        + cfg.lambda_fm * fm
    )
    return {"gan": gan, "color": color, "mouth": mouth_term, "perceptual": perc, "fm": fm, "total": total}


class RandomConvPerceptual(nn.Module):
    """Fixed random convolutional feature stack used as the default
    perceptual metric; a pretrained extractor is a drop-in replacement."""

    def __init__(self, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.stack = nn.ModuleList(
                [
                    nn.Sequential(nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU()),
                    nn.Sequential(nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU()),
                    nn.Sequential(nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU()),
                ]
            )
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list:
        features = []
        h = x
        for layer in self.stack:
            h = layer(h)
            features.append(h)
        return features
