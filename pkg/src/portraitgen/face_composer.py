"""Facial composer: fuse subject style with generated mouth/eye points
into dense 478-point facial landmarks, adversarially trained.

Three MLP encoders map the subject face, mouth points, and eye points
into a shared latent space; mouth and eye codes are concatenated, the
tiled subject code is added, and an MLP decoder emits the dense face.
A least-squares GAN objective plus an L1 term trains the composer
against an MLP discriminator over flattened point sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, NonFiniteLoss, ShapeMismatch

FACE_DIM = 478 * 3
MOUTH_DIM = 40 * 3
EYE_DIM = 60 * 3


@dataclass(frozen=True)
class FacoConfig:
    """Latent width and loss weighting of the composer stage."""

    d: int = 256
    l1_weight: float = 10.0

    def __post_init__(self):
        if self.d <= 0:
            raise ConfigError("latent width must be positive")
        if self.l1_weight < 0:
            raise ConfigError("l1 weight must be non-negative")


def _mlp(dims):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _flatten_points(x: torch.Tensor, rows: int, name: str) -> torch.Tensor:
    if x.shape[-2:] != (rows, 3):
        raise ShapeMismatch(f"{name} must end in ({rows}, 3), got {tuple(x.shape)}")
    return x.reshape(*x.shape[:-2], rows * 3)


class FaCoNet(nn.Module):
    """Mouth/eye/subject encoders + dense-face decoder.

    Accepts single samples ([40,3] etc.) or batches ([B,40,3] etc.).
    """

    def __init__(self, cfg: FacoConfig = FacoConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.mouth_encoder = _mlp([MOUTH_DIM, d, d])
        self.eye_encoder = _mlp([EYE_DIM, d, d])
        self.subject_encoder = _mlp([FACE_DIM, d, d])
        self.decoder = _mlp([2 * d, 2 * d, FACE_DIM])

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def forward(self, subject: torch.Tensor, mouth: torch.Tensor, eye: torch.Tensor) -> torch.Tensor:
        p_m = self.mouth_encoder(_flatten_points(mouth, 40, "mouth"))
        p_e = self.eye_encoder(_flatten_points(eye, 60, "eye"))
        p_f = self.subject_encoder(_flatten_points(subject, 478, "subject"))
        fused = torch.cat([p_m, p_e], dim=-1) + torch.cat([p_f, p_f], dim=-1)  # tile subject code to 2d
        out = self.decoder(fused)
        return out.reshape(*out.shape[:-1], 478, 3)


class PointDiscriminator(nn.Module):
    """MLP over flattened dense-face points -> scalar realism score."""

    def __init__(self, d: int = 256):
        super().__init__()
        self.net = _mlp([FACE_DIM, d, d, 1])

    def forward(self, face: torch.Tensor) -> torch.Tensor:
        return self.net(_flatten_points(face, 478, "face")).squeeze(-1)


def loss_disc(real_score: torch.Tensor, fake_score: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator objective: (z - 1)^2 + z_hat^2."""
    return torch.mean((real_score - 1.0) ** 2) + torch.mean(fake_score**2)


def loss_gen(fake_score: torch.Tensor, pred_face: torch.Tensor, gt_face: torch.Tensor, l1_weight: float = 10.0) -> torch.Tensor:
    """Least-squares generator objective plus weighted mean-L1 point error."""
    if pred_face.shape != gt_face.shape:
        raise ShapeMismatch(f"face shapes differ: {tuple(pred_face.shape)} vs {tuple(gt_face.shape)}")
    adv = torch.mean((fake_score - 1.0) ** 2)
    return adv + l1_weight * torch.mean(torch.abs(gt_face - pred_face))


def train_step(
    batch: dict,
    net: FaCoNet,
    disc: PointDiscriminator,
    gen_opt: torch.optim.Optimizer,
    disc_opt: torch.optim.Optimizer,
    l1_weight: float | None = None,
) -> dict:
    """One alternating update: discriminator first, then the composer.

    ``batch`` maps 'subject'/'mouth'/'eye'/'face' to tensors. Returns the
    two loss values; raises NonFiniteLoss with diagnostics on NaN/Inf.
    """
    if l1_weight is None:
        l1_weight = net.cfg.l1_weight
    subject, mouth, eye, gt_face = (batch[k] for k in ("subject", "mouth", "eye", "face"))

    pred = net(subject, mouth, eye)

    disc_opt.zero_grad()
    d_loss = loss_disc(disc(gt_face), disc(pred.detach()))
    if not torch.isfinite(d_loss):
        raise NonFiniteLoss(f"discriminator loss is {d_loss.item()}")
    d_loss.backward()
    disc_opt.step()

    gen_opt.zero_grad()
    g_loss = loss_gen(disc(pred), pred, gt_face, l1_weight=l1_weight)
    if not torch.isfinite(g_loss):
        raise NonFiniteLoss(f"generator loss is {g_loss.item()}")
    g_loss.backward()
    gen_opt.step()

    return {"disc": float(d_loss.detach()), "gen": float(g_loss.detach())}
