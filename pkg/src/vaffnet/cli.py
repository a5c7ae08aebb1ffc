"""Command-line entry point: ``vaffnet <command> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .network import FUSION_MODES
from .phantom import PhantomConfig

INPUT_CHOICES = ("multi", "single", "triplicate")


def _size(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("size must be H,W")
    return parts[0], parts[1]


def _load_config(args):
    from .training import TrainConfig

    cfg = TrainConfig.from_file(args.config)
    overrides = {}
    if getattr(args, "fusion_mode", None):
        overrides["fusion_mode"] = args.fusion_mode
    if getattr(args, "input_mode", None):
        overrides["input_mode"] = args.input_mode
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_synth(args) -> int:
    from .training import synth

    cfg = PhantomConfig(image_size=args.size, rng_seed=args.seed)
    if args.faz_radius is not None:
        cfg.faz_radius = args.faz_radius
    if args.trees is not None:
        cfg.n_trees = args.trees
    root = synth(args.count, cfg, args.out, test_fraction=args.test_fraction)
    print(f"wrote {args.count} samples to {root}")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = _load_config(args)
    path = train(cfg, resume=args.resume)
    print(path)
    return 0


def cmd_eval(args) -> int:
    from .metrics import format_table, summarize
    from .training import evaluate

    reports, path = evaluate(args.checkpoint, args.data, args.split, out_path=args.out, input_mode=args.input_mode)
    print(format_table({args.split: summarize(reports)}, title="Split"), end="")
    print(f"report: {path}")
    return 0


def cmd_predict(args) -> int:
    from .training import predict

    print(predict(args.checkpoint, args.sample, args.out))
    return 0


def cmd_visualize(args) -> int:
    from .visualize import visualize

    print(visualize(args.sample, args.pred, args.out))
    return 0


def cmd_ablate(args) -> int:
    from .training import ablate

    cfg = _load_config(args)
    table, _ = ablate(cfg, args.modes, input_modes=args.input_modes, out_path=args.out)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaffnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic phantom dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=_size, default=(128, 128), help="H,W")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--test-fraction", type=float, default=0.25)
    s.add_argument("--faz-radius", type=float)
    s.add_argument("--trees", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--fusion-mode", choices=FUSION_MODES)
    s.add_argument("--input-mode", choices=INPUT_CHOICES)
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--input-mode", choices=INPUT_CHOICES)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="run a checkpoint on one sample directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("visualize", help="overlay a prediction on its sample")
    s.add_argument("--sample", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_visualize)

    s = sub.add_parser("ablate", help="compare fusion (and input) modes")
    s.add_argument("--config", required=True)
    s.add_argument("--modes", nargs="+", choices=FUSION_MODES, default=list(FUSION_MODES))
    s.add_argument("--input-modes", nargs="+", choices=INPUT_CHOICES)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
