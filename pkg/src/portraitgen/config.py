"""Pipeline configuration: one structured file with per-stage sections.

Two named presets ship: "paper" carries the full-scale defaults
(256^2 renderer, d = 256, epochs (200, 300, 100), batches (32, 32, 4));
"desk" shrinks everything so training checks run in minutes on a CPU.
CLI flags override file values, which override preset values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .face_composer import FacoConfig
from .geometry import CameraModel
from .motion_net import ModaConfig
from .renderer import RendererConfig


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.99)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    fps: float = 25.0
    sample_rate: int = 16000
    window: int = 300
    stride: int = 150
    epochs: tuple[int, int, int] = (200, 300, 100)
    batch_sizes: tuple[int, int, int] = (32, 32, 4)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    moda: ModaConfig = field(default_factory=ModaConfig)
    faco: FacoConfig = field(default_factory=FacoConfig)
    renderer: RendererConfig = field(default_factory=RendererConfig)
    camera: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if any(e <= 0 for e in self.epochs) or any(b <= 0 for b in self.batch_sizes):
            raise ConfigError("epochs and batch sizes must be positive")
        if self.window < 1 or self.stride < 1 or self.stride > self.window:
            raise ConfigError("need 1 <= stride <= window")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["camera"] = {
            "mode": self.camera.mode,
            "scale": self.camera.scale,
            "principal": list(self.camera.principal),
            "image_size": list(self.camera.image_size),
        }
        return d


def desk_preset() -> PipelineConfig:
    """Small profile: 64^2 renderer, d = 64, runs end to end in minutes."""
    res = 64
    return PipelineConfig(
        epochs=(60, 40, 20),
        batch_sizes=(1, 16, 2),
        optimizer=OptimizerConfig(lr=1e-3),
        moda=ModaConfig(audio_dim=26, d=64, d_l=16, q=0.04),
        faco=FacoConfig(d=64),
        renderer=RendererConfig(
            resolution=res,
            enc_channels=(16, 32, 64, 64, 64, 64),
            disc_base_channels=16,
            disc_scales=2,
        ),
        camera=CameraModel(mode="orthographic", scale=res / 4.0, principal=(res / 2.0, res / 2.0), image_size=(res, res)),
    )


def paper_preset() -> PipelineConfig:
    return PipelineConfig(
        camera=CameraModel(mode="orthographic", scale=64.0, principal=(128.0, 128.0), image_size=(256, 256)),
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}


def _build(section: dict, cls, base):
    unknown = set(section) - set(asdict(base))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    merged = {**asdict(base), **section}
    for key, value in merged.items():
        if isinstance(value, list):
            merged[key] = tuple(value)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(data: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    data = dict(data)
    sections = {
        "optimizer": (OptimizerConfig, base.optimizer),
        "moda": (ModaConfig, base.moda),
        "faco": (FacoConfig, base.faco),
        "renderer": (RendererConfig, base.renderer),
        "camera": (CameraModel, base.camera),
    }
    kwargs = {}
    for name, (cls, section_base) in sections.items():
        if name in data:
            kwargs[name] = _build(data.pop(name), cls, section_base)
    top_fields = {"seed", "fps", "sample_rate", "window", "stride", "epochs", "batch_sizes"}
    unknown = set(data) - top_fields
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for key in ("epochs", "batch_sizes"):
        if key in data:
            data[key] = tuple(data[key])
    return replace(base, **data, **kwargs)


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Preset -> file -> CLI overrides, later sources win."""
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, have {sorted(PRESETS)}")
        cfg = PRESETS[preset]()
    else:
        cfg = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON in {path}: {exc}") from exc
        cfg = config_from_dict(data, base=cfg)
    if overrides:
        cfg = config_from_dict(overrides, base=cfg)
    return cfg
