"""Named-parameter checkpoint archives with a config-hashed manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import DataError, MissingCheckpoint

STAGES = ("moda", "faco", "renderer")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=float).encode()).hexdigest()


@dataclass
class CheckpointArchive:
    """Parameter blobs plus a manifest tying them to the run that made them."""

    stage: str
    config: dict
    step: int
    state: dict
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise DataError(f"unknown stage {self.stage!r}, expected one of {STAGES}")

    @property
    def manifest(self) -> dict:
        return {
            "stage": self.stage,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "step": self.step,
            "metrics": self.metrics,
        }


def save_checkpoint(path, archive: CheckpointArchive):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save({"manifest": archive.manifest, "state": archive.state}, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> CheckpointArchive:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    manifest = payload["manifest"]
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise DataError(f"{path}: manifest hash does not match stored config")
    return CheckpointArchive(
        stage=manifest["stage"],
        config=manifest["config"],
        step=manifest["step"],
        state=payload["state"],
        metrics=manifest.get("metrics", {}),
    )
