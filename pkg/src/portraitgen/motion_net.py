"""Audio-to-motion network: one forward pass emits all four motion streams.

Architecture: an audio MLP and a subject-style MLP feed a dual-attention
block. The deterministic branch cross-attends motion latents to audio under
a hard diagonal alignment bias (exact frame-to-frame sync); the stochastic
branch is a sequence VAE whose latent sample drives non-deterministic
motion (pose, blinking, torso). The two branch outputs are concatenated
per time step and decoded by four MLP tails into displacement streams.

All sequence operations take unbatched [T, d] tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DimMismatch, ShapeMismatch

NEG_INF = float("-inf")
LOG_SIGMA_CLAMP = 10.0

STREAM_SHAPES = {"mouth": (40, 3), "pose": (6,), "eye": (60, 3), "torso": (18, 3)}


@dataclass(frozen=True)
class ModaConfig:
    """Hyper-parameters of the motion network."""

    audio_dim: int = 80
    d: int = 256
    d_l: int = 64
    q: float = 1.0
    n_heads: int = 1
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    value_source: str = "audio"
    ppe_period: Optional[int] = None

    def __post_init__(self):
        if self.d <= 0 or self.d_l <= 0 or self.audio_dim <= 0:
            raise ConfigError("feature and latent dims must be positive")
        if self.q <= 0:
            raise ConfigError("causal-bias parameter q must be positive")
        if self.d % 2 != 0:
            raise ConfigError("d must be even (sin/cos encoding pairs)")
        if any(l < 0 for l in self.lambdas):
            raise ConfigError("task-loss weights must be non-negative")
        if self.value_source not in ("audio", "motion"):
            raise ConfigError("value_source must be 'audio' or 'motion'")
        if self.ppe_period is not None and self.ppe_period < 1:
            raise ConfigError("ppe_period must be >= 1")

    @property
    def period(self) -> int:
        """Positional-encoding period; derived from q unless set explicitly."""
        if self.ppe_period is not None:
            return self.ppe_period
        return max(1, int(round(1.0 / self.q)))


class VaeMoments(NamedTuple):
    mu: torch.Tensor
    log_sigma: torch.Tensor


@dataclass
class MotionOutput:
    """Displacement streams for one clip: [T,40,3], [T,6], [T,60,3], [T,18,3]."""

    mouth: torch.Tensor
    pose: torch.Tensor
    eye: torch.Tensor
    torso: torch.Tensor

    def __post_init__(self):
        t = self.mouth.shape[0]
        for name, tail_shape in STREAM_SHAPES.items():
            tensor = getattr(self, name)
            if tensor.shape != (t, *tail_shape):
                raise ShapeMismatch(f"{name} stream has shape {tuple(tensor.shape)}, expected {(t, *tail_shape)}")

    @property
    def frames(self) -> int:
        return self.mouth.shape[0]

    def numpy(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name).detach().cpu().numpy() for name in STREAM_SHAPES}

    @classmethod
    def from_arrays(cls, arrays: dict, dtype=torch.float32) -> "MotionOutput":
        return cls(**{name: torch.as_tensor(arrays[name], dtype=dtype) for name in STREAM_SHAPES})


class ModaForward(NamedTuple):
    motion: MotionOutput
    moments: VaeMoments
    fused: torch.Tensor  # [T, 2d]; first d columns are the deterministic branch


# -- attention biases and positional encoding --------------------------------

def alignment_bias(t: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Hard diagonal bias: 0 on the diagonal, -inf elsewhere."""
    if t < 1:
        raise ShapeMismatch("sequence length must be >= 1")
    bias = torch.full((t, t), NEG_INF, dtype=dtype, device=device)
    bias.fill_diagonal_(0.0)
    return bias


def causal_bias(t: int, q: float, dtype=torch.float32, device=None) -> torch.Tensor:
    """Lower-triangular bias floor((i - j) * q); -inf above the diagonal."""
    if t < 1:
        raise ShapeMismatch("sequence length must be >= 1")
    if q <= 0:
        raise ConfigError("q must be positive")
    idx = torch.arange(t, dtype=torch.float64, device=device)
    diff = idx[:, None] - idx[None, :]
    bias = torch.floor(diff * q)
    bias[diff < 0] = NEG_INF
    return bias.to(dtype)


def periodic_encoding(t: int, d: int, period: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Sinusoidal table [t, d] whose phase repeats every ``period`` frames."""
    if period < 1:
        raise ConfigError("period must be >= 1")
    pos = (torch.arange(t, device=device) % period).to(torch.float64)
    i = torch.arange(0, d, 2, device=device).to(torch.float64)
    div = torch.pow(torch.tensor(10000.0, dtype=torch.float64, device=device), i / d)
    table = torch.zeros(t, d, dtype=torch.float64, device=device)
    table[:, 0::2] = torch.sin(pos[:, None] / div[None, :])
    table[:, 1::2] = torch.cos(pos[:, None] / div[None, :])
    return table.to(dtype)


def ppe(s: torch.Tensor, period: int) -> torch.Tensor:
    """Add the periodic positional encoding to a [T, d] sequence."""
    if s.ndim != 2:
        raise ShapeMismatch(f"expected [T, d] sequence, got {tuple(s.shape)}")
    return s + periodic_encoding(s.shape[0], s.shape[1], period, dtype=s.dtype, device=s.device)


def combine(s_a: torch.Tensor, v_s: torch.Tensor) -> torch.Tensor:
    """Tile the style code over time and add it to the audio latents."""
    if s_a.ndim != 2 or v_s.ndim != 1 or s_a.shape[1] != v_s.shape[0]:
        raise DimMismatch(f"cannot combine {tuple(s_a.shape)} with {tuple(v_s.shape)}")
    return s_a + v_s[None, :]


# -- building blocks ----------------------------------------------------------

def _mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    t, d = x.shape
    return x.view(t, n_heads, d // n_heads).transpose(0, 1)  # [H, T, dh]


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    h, t, dh = x.shape
    return x.transpose(0, 1).reshape(t, h * dh)


class BiasedCausalSelfAttention(nn.Module):
    """Self-attention over the positionally encoded sequence with a graded
    causal bias: row t never sees rows > t."""

    def __init__(self, d: int, q: float, n_heads: int = 1, period: int = 1):
        super().__init__()
        if d % n_heads != 0:
            raise ConfigError("d must be divisible by n_heads")
        self.d = d
        self.q = q
        self.n_heads = n_heads
        self.period = period
        self.proj_q = nn.Linear(d, d)
        self.proj_k = nn.Linear(d, d)
        self.proj_v = nn.Linear(d, d)
        self.proj_out = nn.Linear(d, d)

    def forward(self, s: torch.Tensor, return_weights: bool = False):
        if s.ndim != 2 or s.shape[1] != self.d:
            raise ShapeMismatch(f"expected [T, {self.d}], got {tuple(s.shape)}")
        t = s.shape[0]
        x = ppe(s, self.period)
        q = _split_heads(self.proj_q(x), self.n_heads)
        k = _split_heads(self.proj_k(x), self.n_heads)
        v = _split_heads(self.proj_v(x), self.n_heads)
        bias = causal_bias(t, self.q, dtype=s.dtype, device=s.device)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d // self.n_heads) + bias
        weights = torch.softmax(scores, dim=-1)
        out = self.proj_out(_merge_heads(weights @ v))
        if return_weights:
            return out, weights
        return out


class SpecificAttention(nn.Module):
    """Cross-attention from encoded motion latents to audio features under
    the hard diagonal alignment bias; the deterministic lip-sync pathway.

    With the hard bias the softmax row t is exactly one-hot at t, so the
    output row equals the value row: audio features by default, or the
    encoded motion latents when ``value_source='motion'``.
    """

    def __init__(self, d: int, q: float, n_heads: int = 1, period: int = 1, value_source: str = "audio"):
        super().__init__()
        self.d = d
        self.value_source = value_source
        self.gamma = BiasedCausalSelfAttention(d, q, n_heads=n_heads, period=period)

    def forward(self, s_a: torch.Tensor, s: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
        if s_a.shape != s.shape or s_a.shape[1] != self.d:
            raise DimMismatch(f"audio {tuple(s_a.shape)} and motion {tuple(s.shape)} latents must both be [T, {self.d}]")
        g = self.gamma(s)
        if bias is None:
            bias = alignment_bias(s.shape[0], dtype=s.dtype, device=s.device)
        scores = g @ s_a.transpose(0, 1) / math.sqrt(self.d) + bias
        weights = torch.softmax(scores, dim=-1)
        value = s_a if self.value_source == "audio" else g
        return weights @ value


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block (bidirectional)."""

    def __init__(self, d: int, n_heads: int = 1):
        super().__init__()
        if d % n_heads != 0:
            raise ConfigError("d must be divisible by n_heads")
        self.n_heads = n_heads
        self.d = d
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.proj_q = nn.Linear(d, d)
        self.proj_k = nn.Linear(d, d)
        self.proj_v = nn.Linear(d, d)
        self.proj_out = nn.Linear(d, d)
        self.ffn = nn.Sequential(nn.Linear(d, 2 * d), nn.ReLU(), nn.Linear(2 * d, d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        q = _split_heads(self.proj_q(h), self.n_heads)
        k = _split_heads(self.proj_k(h), self.n_heads)
        v = _split_heads(self.proj_v(h), self.n_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d // self.n_heads)
        attn = self.proj_out(_merge_heads(torch.softmax(scores, dim=-1) @ v))
        x = x + attn
        return x + self.ffn(self.ln2(x))


class ProbabilisticAttention(nn.Module):
    """Sequence VAE branch: encode the whole sequence to latent moments,
    re-sample, and decode the latent back into a per-frame feature track.

    Modes: 'train' uses the reparameterized posterior sample mu + sigma*eps,
    'sample' draws from the standard-normal prior, 'mean' uses the prior
    mean (all zeros) and is therefore deterministic.
    """

    def __init__(self, d: int, d_l: int, n_enc_layers: int = 2, n_dec_layers: int = 2, period: int = 1):
        super().__init__()
        self.d = d
        self.d_l = d_l
        self.period = period
        self.encoder = nn.ModuleList(TransformerBlock(d) for _ in range(n_enc_layers))
        self.mu_head = nn.Linear(d, d_l)
        self.log_sigma_head = nn.Linear(d, d_l)
        self.latent_in = nn.Linear(d_l, d)
        self.decoder = nn.ModuleList(TransformerBlock(d) for _ in range(n_dec_layers))

    def moments(self, s: torch.Tensor) -> VaeMoments:
        h = s
        for block in self.encoder:
            h = block(h)
        pooled = h.mean(dim=0)
        mu = self.mu_head(pooled)
        log_sigma = torch.clamp(self.log_sigma_head(pooled), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
        return VaeMoments(mu=mu, log_sigma=log_sigma)

    def decode(self, x: torch.Tensor, t: int) -> torch.Tensor:
        h = self.latent_in(x)[None, :].expand(t, self.d)
        # the broadcast latent is constant over time; the positional table
        # gives the decoder blocks something to differentiate frames with
        h = ppe(h, self.period)
        for block in self.decoder:
            h = block(h)
        return h

    @staticmethod
    def sample_latent(moments: VaeMoments, mode: str = "train", generator: torch.Generator | None = None) -> torch.Tensor:
        mu, log_sigma = moments
        if mode == "train":
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            return mu + torch.exp(log_sigma) * eps
        if mode == "sample":
            return torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
        if mode == "mean":
            return torch.zeros_like(mu)
        raise ConfigError(f"unknown mode {mode!r}")

    def forward(self, s: torch.Tensor, mode: str = "train", generator: torch.Generator | None = None):
        if s.ndim != 2 or s.shape[1] != self.d:
            raise ShapeMismatch(f"expected [T, {self.d}], got {tuple(s.shape)}")
        m = self.moments(s)
        x = self.sample_latent(m, mode=mode, generator=generator)
        return self.decode(x, s.shape[0]), m


class DualAttention(nn.Module):
    """Runs both branches and concatenates them per time step to [T, 2d]."""

    def __init__(self, cfg: ModaConfig):
        super().__init__()
        self.spec = SpecificAttention(cfg.d, cfg.q, n_heads=cfg.n_heads, period=cfg.period, value_source=cfg.value_source)
        self.prob = ProbabilisticAttention(cfg.d, cfg.d_l, cfg.n_enc_layers, cfg.n_dec_layers, period=cfg.period)

    def forward(self, s: torch.Tensor, s_a: torch.Tensor, mode: str = "train", generator: torch.Generator | None = None):
        if s.shape != s_a.shape:
            raise DimMismatch(f"motion latents {tuple(s.shape)} and audio latents {tuple(s_a.shape)} must match")
        s_sa = self.spec(s_a, s)
        s_pa, moments = self.prob(s, mode=mode, generator=generator)
        return torch.cat([s_sa, s_pa], dim=1), moments


class ModaNet(nn.Module):
    """Full audio + subject -> four motion displacement streams network."""

    def __init__(self, cfg: ModaConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.audio_encoder = _mlp([cfg.audio_dim, d, d])
        self.subject_encoder = _mlp([478 * 3, d, d])
        self.dual = DualAttention(cfg)
        self.tails = nn.ModuleDict(
            {name: _mlp([2 * d, 2 * d, int(np.prod(shape))]) for name, shape in STREAM_SHAPES.items()}
        )

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def _as_tensor(self, x) -> torch.Tensor:
        return torch.as_tensor(x, dtype=self.dtype) if not torch.is_tensor(x) else x.to(self.dtype)

    def encode_audio(self, features) -> torch.Tensor:
        feats = self._as_tensor(features)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.audio_dim:
            raise ShapeMismatch(f"audio features must be [T, {self.cfg.audio_dim}], got {tuple(feats.shape)}")
        return self.audio_encoder(feats)

    def encode_subject(self, vertices) -> torch.Tensor:
        verts = self._as_tensor(vertices)
        if verts.shape != (478, 3):
            raise ShapeMismatch(f"subject vertices must be [478, 3], got {tuple(verts.shape)}")
        return self.subject_encoder(verts.reshape(-1))

    def decode_motion(self, fused: torch.Tensor) -> MotionOutput:
        if fused.ndim != 2 or fused.shape[1] != 2 * self.cfg.d:
            raise ShapeMismatch(f"fused latents must be [T, {2 * self.cfg.d}], got {tuple(fused.shape)}")
        t = fused.shape[0]
        streams = {
            name: self.tails[name](fused).reshape(t, *shape)
            for name, shape in STREAM_SHAPES.items()
        }
        return MotionOutput(**streams)

    def forward(self, audio_features, subject_vertices, mode: str = "train", seed: int | None = None) -> ModaForward:
        generator = None
        if seed is not None:
            generator = torch.Generator()
            generator.manual_seed(int(seed))
        s_a = self.encode_audio(audio_features)
        v_s = self.encode_subject(subject_vertices)
        s = combine(s_a, v_s)
        fused, moments = self.dual(s, s_a, mode=mode, generator=generator)
        return ModaForward(motion=self.decode_motion(fused), moments=moments, fused=fused)


# -- losses -------------------------------------------------------------------

def loss_tp(pred: MotionOutput, gt: MotionOutput, lambdas=(1.0, 1.0, 1.0, 1.0)) -> torch.Tensor:
    """Weighted sum of mean-L1 errors over the four displacement streams."""
    if pred.frames != gt.frames:
        raise ShapeMismatch(f"prediction has {pred.frames} frames, ground truth {gt.frames}")
    terms = []
    for weight, name in zip(lambdas, STREAM_SHAPES):
        terms.append(weight * torch.mean(torch.abs(getattr(gt, name) - getattr(pred, name))))
    return sum(terms)


def loss_kld(moments: VaeMoments) -> torch.Tensor:
    """Gaussian KL to the standard normal, averaged over latent dims.

    With sigma = exp(log_sigma) treated as the variance:
    (1 / 2 d_l) * sum(mu^2 + sigma - log_sigma - 1); zero iff mu=0, sigma=1.
    """
    mu, log_sigma = moments
    d_l = mu.shape[-1]
    sigma = torch.exp(log_sigma)
    return torch.sum(mu * mu + sigma - log_sigma - 1.0) / (2.0 * d_l)


def loss_total(pred: MotionOutput, gt: MotionOutput, moments: VaeMoments, lambdas=(1.0, 1.0, 1.0, 1.0)) -> torch.Tensor:
    return loss_tp(pred, gt, lambdas) + loss_kld(moments)
