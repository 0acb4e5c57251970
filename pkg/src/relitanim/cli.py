"""Command-line interface.

Subcommands: hints, align, sample, train-toy, relight. Each takes an
optional ``--config`` JSON file; flags override its fields. On failure the
process exits non-zero and prints one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config, validate_config
from .pipeline import PipelineError, run_align, run_hints, run_relight, run_sample, run_train

SUBCOMMANDS = {
    "hints": ("hints-only", run_hints, "align the driving sequence and render shading hints"),
    "align": ("hints-only", run_align, "align the driving sequence to the reference (writes aligned.json)"),
    "sample": ("sample-oracle", run_sample, "guided DDIM sampling of one window with the Gaussian oracle"),
    "train-toy": ("train-toy", run_train, "train the toy adapters and denoiser on synthetic data"),
    "relight": ("relight-animate", run_relight, "full pipeline: hints, features, windowed sampling, frames"),
}

# flag -> (config key, type, help); paths are resolved against the cwd
FLAGS = {
    "--model": ("model", Path, "face model JSON {m, n_shape, n_expr, seed}"),
    "--driving": ("driving", Path, "driving sequence JSON (per-frame rotation/translation/expression)"),
    "--reference": ("reference", Path, "reference parameters JSON (pose and shape)"),
    "--lighting": ("lighting", Path, 'target lighting JSON {"sh": 3x9}'),
    "--weights": ("weights", Path, "trained toy weights prefix (required with --backend toy)"),
    "--output-dir": ("output_dir", Path, "output directory (default: out)"),
    "--omega": ("omega", float, "guidance scale (default 4.5)"),
    "--steps": ("steps", int, "DDIM sampling steps (default 25)"),
    "--window": ("window", int, "frames per sampling window (default 16)"),
    "--overlap": ("overlap", int, "frames shared by consecutive windows (default 6)"),
    "--seed": ("seed", int, "master seed (default 0)"),
    "--resolution": ("resolution", int, "hint image size, multiple of 8 (default 512)"),
    "--feature-channels": ("feature_channels", int, "adapter output channels (default 64)"),
    "--sigma0": ("sigma0", float, "oracle data std (default 0)"),
    "--mask-polarity": ("mask_polarity", str, "region excluded from the loss: portrait|background"),
    "--alignment": ("alignment", str, "relative|scale-consistent (default relative)"),
    "--backend": ("backend", str, "denoiser: oracle|toy (default oracle)"),
}
TRAIN_FLAGS = {
    "--lr": ("lr", float, "learning rate (default 0.05)"),
    "--train-steps": ("steps", int, "training steps"),
    "--batch-size": ("batch_size", int, "batch size"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config JSON")
    for flag, (key, typ, text) in FLAGS.items():
        common.add_argument(flag, dest=key, type=str if typ is Path else typ, default=None, help=text)
    parser = argparse.ArgumentParser(prog="relitanim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "train-toy":
            for flag, (key, typ, help_) in TRAIN_FLAGS.items():
                p.add_argument(flag, dest=f"train_{key}", type=typ, default=None, help=help_)
    return parser


def _overrides(args: argparse.Namespace, mode: str) -> dict:
    over: dict = {"mode": mode}
    for key, typ, _ in FLAGS.values():
        value = getattr(args, key)
        if value is not None:
            over[key] = str(Path(value).resolve()) if typ is Path else value
    train = {key: getattr(args, f"train_{key}") for key, _, _ in TRAIN_FLAGS.values()
             if getattr(args, f"train_{key}", None) is not None}
    if train:
        over["train"] = train
    return over


def _fail(payload: dict, code: int) -> int:
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    mode, runner, _ = SUBCOMMANDS[args.command]
    over = _overrides(args, mode)
    try:
        if args.config is not None:
            cfg = load_config(args.config, over)
        else:
            cfg = validate_config(over)
    except ConfigError as exc:
        return _fail({"error": "ConfigError", "details": [{"path": p, "message": m} for p, m in exc.errors]}, 2)
    try:
        manifest = runner(cfg)
    except PipelineError as exc:
        return _fail(exc.to_dict(), 1)
    print(json.dumps({"status": "ok", "output_dir": str(cfg.output_dir), "files": len(manifest["files"])}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
