"""Command line entry point: ``secdepth synth | train | eval | verify``."""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("secdepth")


class UsageError(Exception):
    pass


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"size must look like HxW, got {text!r}") from None
    if h < 16 or w < 16 or h % 4 or w % 4:
        raise UsageError(f"size {h}x{w} must be >= 16 and divisible by 4")
    return h, w


def resolve_config(path: str) -> Path:
    """Config paths fall back to the presets bundled with the package."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("secdepth") / "presets" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"config {path!r} not found")


def cmd_synth(args) -> int:
    from .geomphoto import CameraModel
    from .trainpipe.dataio import write_dataset
    from .weathersim import make_dataset

    h, w = parse_size(args.size)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    cam = CameraModel(cx=w / 2, cy=h / 2, max_disp_px=args.max_disp_px)
    samples = make_dataset(args.seed, args.count, (h, w), cam)
    try:
        write_dataset(samples, args.out, args.seed, (h, w))
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _write_manifest(out: Path, config, dataset_hash: str) -> None:
    manifest = {
        "config": config.to_dict(),
        "dataset_hash": dataset_hash,
        "tool_version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    import hashlib

    from .trainpipe import ConfigError, TrainConfig, Trainer, TrainingAborted
    from .trainpipe.dataio import manifest_hash

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume)
        config = trainer.config
    else:
        try:
            config = TrainConfig.load(resolve_config(args.config))
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_USAGE
        env_seed = os.environ.get("SECDEPTH_SEED")
        if env_seed is not None:
            config = dataclasses.replace(config, seed=int(env_seed))
        trainer = Trainer(config)
    ds = config.dataset
    if ds.train_dir:
        data_hash = manifest_hash(ds.train_dir)
    else:
        data_hash = hashlib.sha256(json.dumps(dataclasses.asdict(ds), sort_keys=True).encode()).hexdigest()
    _write_manifest(out, config, data_hash)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    try:
        trainer.run(until=args.until, checkpoint_dir=ckpt_dir, csv_path=out / "metrics.csv")
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    trainer.save(ckpt_dir / "last.secd")
    print(f"trained to step {trainer.step}; augmented steps {trainer.aug_steps}; queue updates {trainer.queue.update_count}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainpipe import Trainer
    from .trainpipe.dataio import read_dataset
    from .trainpipe.trainer import evaluate_by_weather

    try:
        samples = read_dataset(args.dataset)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read dataset: {exc}") from None
    if args.weather:
        samples = [s for s in samples if s.weather.get("kind") == args.weather]
        if not samples:
            raise UsageError(f"no samples with weather {args.weather!r}")
    trainer = Trainer.from_checkpoint(args.checkpoint, train=samples[:1], test=samples)
    result = evaluate_by_weather(trainer.model, samples, trainer.cam)
    print(json.dumps({k: v.as_dict() for k, v in result.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .secloss import ScheduleState
    from .verify import format_report, run_all

    override = None
    if args.perturb_alpha1 is not None:
        override = ScheduleState(t=0, T=1000, a=args.perturb_alpha1)
    results = run_all(override)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secdepth", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic stereo dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", default="64x128")
    p.add_argument("--max-disp-px", type=float, default=8.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", default="presets/sec_full.json")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--until", type=int, help="stop after this global step")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--weather", choices=["fog", "rain", "snow"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--perturb-alpha1", type=float, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
