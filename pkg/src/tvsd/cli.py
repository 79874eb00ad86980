"""Command line driver: ``tvsd {synth,validate,train,infer,eval}``.

Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import datamodel, metrics
from .errors import TVSDError
from .pipeline import config as config_mod
from .pipeline.checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .pipeline.inference import infer_dataset
from .pipeline.train import train

log = logging.getLogger("tvsd")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.epochs=3 (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (overrides train.seed)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--split", choices=datamodel.SPLITS, help="dataset split")
    common.add_argument("--root", type=Path, help="dataset root (overrides data.root)")
    common.add_argument("--checkpoint", type=Path, help="checkpoint file")
    common.add_argument("--device", help="torch device (overrides train.device)")

    parser = argparse.ArgumentParser(prog="tvsd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic fixture dataset")
    sub.add_parser("validate", parents=[common], help="check a dataset and report statistics")
    sub.add_parser("train", parents=[common], help="train and write checkpoint + loss log")
    sub.add_parser("infer", parents=[common], help="export shadow maps for a split")
    p_eval = sub.add_parser("eval", parents=[common], help="score exported maps against ground truth")
    p_eval.add_argument("--pred", type=Path, required=True, help="directory of predicted maps")
    return parser


def effective_config(args) -> config_mod.Config:
    cfg = config_mod.load_config(args.config) if args.config else config_mod.Config()
    overrides = dict(config_mod.parse_override(o) for o in args.overrides)
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    if args.root is not None:
        overrides["data.root"] = str(args.root)
    if args.device is not None:
        overrides["train.device"] = args.device
    return cfg.with_overrides(overrides) if overrides else cfg


def _require(value, flag: str):
    if value is None:
        raise TVSDError(f"{flag} is required for this command")
    return value


def _index(cfg, split):
    return datamodel.index_dataset(_require(cfg.data.root, "--root (or data.root)"), split)


def cmd_synth(args, cfg) -> int:
    out = _require(args.out, "--out")
    s = cfg.synth
    synth = datamodel.SynthConfig(s.n_videos, s.frames_per_video, s.size, cfg.train.seed, args.split or "train")
    index = datamodel.generate_synthetic(out, synth)
    print(f"wrote {index.n_frames} frames in {len(index.videos)} videos to {out}")
    return 0


def cmd_validate(args, cfg) -> int:
    split = args.split or "train"
    index = _index(cfg, split)
    companion = None
    other = "test" if split == "train" else "train"
    if (index.root / other).is_dir():
        companion = datamodel.index_dataset(index.root, other)
    report = datamodel.validate_dataset(index, companion)
    sys.stdout.write(report.to_text())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        report.save(args.out / "validation.json")
    return 0


def cmd_train(args, cfg) -> int:
    out = _require(args.out, "--out")
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    index = _index(cfg, args.split or "train")
    result = train(cfg, index, out_dir=out)
    save_checkpoint(result.checkpoint, out / "checkpoint.pt")
    last = result.log[-1]
    print(f"trained {last['step'] + 1} steps, final total loss {last['total']:.4f}; checkpoint {out / 'checkpoint.pt'}")
    return 0


def cmd_infer(args, cfg) -> int:
    out = _require(args.out, "--out")
    ckpt = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    # Network shape comes from the checkpoint; data location and inference options from the command line.
    run_cfg = ckpt.config.replace(data=dataclasses.replace(ckpt.config.data, root=cfg.data.root), infer=cfg.infer)
    model = model_from_checkpoint(ckpt)
    out.mkdir(parents=True, exist_ok=True)
    run_cfg.save(out / "config.json")
    index = _index(run_cfg, args.split or "test")
    manifest = infer_dataset(model, index, out, run_cfg)
    for failure in manifest["failures"]:
        print(f"failed: {failure['frame']}: {failure['error']}", file=sys.stderr)
    print(f"wrote {len(manifest['frames'])} maps to {out}")
    return 1 if manifest["failures"] else 0


def cmd_eval(args, cfg) -> int:
    index = _index(cfg, args.split or "test")
    report = metrics.evaluate(args.pred, index)
    sys.stdout.write(report.to_text())
    if args.out:
        report.save(args.out)
        cfg.save(Path(args.out) / "config.json")
    for path in report.missing:
        print(f"missing prediction: {path}", file=sys.stderr)
    return 1 if report.missing else 0


COMMANDS = {"synth": cmd_synth, "validate": cmd_validate, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except (TVSDError, OSError) as exc:
        print(f"tvsd {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
