"""Command-line entry point.

Verbs: preprocess, train, infer, evaluate, inspect-checkpoint.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io
from .checkpoint import load_checkpoint
from .config import PRESETS, load_config
from .errors import ConfigError, DataError, NumericError


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="JSON config file with per-stage sections")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None, help="named config baseline")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", type=int, default=None, help="inference window length in frames")
    p.add_argument("--stride", type=int, default=None, help="inference window stride in frames")


def _config_from_args(args) -> "PipelineConfig":
    overrides = {}
    for key in ("seed", "window", "stride"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, preset=args.preset, overrides=overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portraitgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="canonicalize clips and build training records")
    p.add_argument("--data", type=Path, required=True, help="dataset directory of clip folders")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train one pipeline stage")
    p.add_argument("--stage", choices=["moda", "faco", "renderer"], required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint output directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    _add_config_flags(p)

    p = sub.add_parser("infer", help="generate frames from audio")
    p.add_argument("--audio", type=Path, required=True)
    p.add_argument("--template", type=Path, required=True, help="subject template .npz")
    p.add_argument("--checkpoints", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True, help="reference portrait image")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="compare an inference run to ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="report output path (.json; .txt written alongside)")
    p.add_argument("--external", type=Path, default=None, help="JSON with externally computed scores to merge")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest")
    p.add_argument("path", type=Path)
    return parser


def run(args) -> int:
    if args.command == "preprocess":
        from .audio import LogMelExtractor
        from .preprocess import build_dataset

        cfg = _config_from_args(args)
        clips = build_dataset(
            args.data,
            fps=cfg.fps,
            extractor=LogMelExtractor(n_mels=cfg.moda.audio_dim),
            camera=cfg.camera,
            seed=cfg.seed,
        )
        for clip in clips:
            print(f"{clip.name}: {clip.frames} frames, {len(clip.train_idx)} train / {len(clip.val_idx)} val")
        return 0

    if args.command == "train":
        from .pipeline import train

        cfg = _config_from_args(args)
        archive = train(args.stage, args.data, cfg, args.out, resume=args.resume, epochs=args.epochs)
        print(f"{args.stage}: step {archive.step}, val loss {archive.metrics.get('val_loss'):.6f}")
        print(f"checkpoints in {args.out}")
        return 0

    if args.command == "infer":
        from .pipeline import infer

        cfg = _config_from_args(args)
        manifest = infer(args.audio, args.template, args.checkpoints, args.reference, args.out, cfg, seed=cfg.seed)
        print(f"wrote {manifest['frames']} frames to {args.out}")
        return 0

    if args.command == "evaluate":
        from .pipeline import evaluate, format_report

        report = evaluate(args.pred, args.gt, external_scores=args.external)
        text = format_report(report)
        print(text, end="")
        if args.out:
            io.write_json(args.out, report)
            Path(args.out).with_suffix(".txt").write_text(text)
        return 0

    if args.command == "inspect-checkpoint":
        archive = load_checkpoint(args.path)
        print(json.dumps(archive.manifest, indent=2, sort_keys=True, default=float))
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
