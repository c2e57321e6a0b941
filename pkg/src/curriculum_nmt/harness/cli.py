"""Command-line entry point: ``curriculum-nmt <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from ..difficulty import CRITERIA
from ..errors import CurriculumError
from ..scheduler import MODES
from . import pipeline
from .config import ExperimentConfig, config_from_dict, load_config

log = logging.getLogger("curriculum_nmt")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.out:
        cfg.output_dir = str(Path(args.out).resolve())
    if args.mode:
        cfg.schedule.mode = args.mode
    if args.k:
        cfg.schedule.K = args.k
    if args.criterion:
        cfg.criterion = args.criterion
    for name in ("data", "vanilla", "cl"):
        value = getattr(args, f"seed_{name}")
        if value is not None:
            setattr(cfg.seeds, name, value)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults: noisy-cipher smoke run)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--mode", choices=MODES, help="schedule mode")
    common.add_argument("--k", type=int, help="number of curriculum subsets")
    common.add_argument("--criterion", choices=CRITERIA, help="difficulty criterion")
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-vanilla", type=int)
    common.add_argument("--seed-cl", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="curriculum-nmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-vanilla", parents=[common], help="train the vanilla model on the full corpus")
    p = sub.add_parser("score", parents=[common], help="write a per-example difficulty score table")
    p.add_argument("--checkpoint", help="vanilla checkpoint (default <out>/vanilla.ckpt)")
    p = sub.add_parser("split", parents=[common], help="split a score table into K ordered subsets")
    p.add_argument("--scores", help="score TSV (default <out>/scores.tsv)")
    p = sub.add_parser("train-cl", parents=[common], help="train the CL model under a schedule")
    p.add_argument("--manifest", help="partition manifest (default <out>/manifest.json)")
    p.add_argument("--vanilla", help="vanilla checkpoint (default <out>/vanilla.ckpt)")
    p = sub.add_parser("report", parents=[common], help="histogram, subset table and learning curves")
    p.add_argument("--scores")
    p.add_argument("--manifest")
    p.add_argument("--curve", action="append", default=[], metavar="NAME=PATH",
                   help="learning-curve CSV to merge (repeatable)")
    p.add_argument("--no-figures", action="store_true")
    sub.add_parser("run-all", parents=[common], help="run every stage end to end")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = _config(args)
        out = cfg.out
        if args.command == "train-vanilla":
            print(pipeline.cmd_train_vanilla(cfg))
        elif args.command == "score":
            print(pipeline.cmd_score(cfg, args.checkpoint))
        elif args.command == "split":
            print(pipeline.cmd_split(args.scores or out / "scores.tsv", cfg.schedule.K))
        elif args.command == "train-cl":
            ckpt, trace = pipeline.cmd_train_cl(cfg, args.manifest, args.vanilla)
            print(ckpt)
            print(trace)
        elif args.command == "report":
            curves = {}
            for item in args.curve:
                name, sep, path = item.partition("=")
                if not sep:
                    raise CurriculumError(f"--curve expects NAME=PATH, got {item!r}")
                curves[name] = Path(path)
            paths = pipeline.cmd_report(args.scores or out / "scores.tsv",
                                        args.manifest or out / "manifest.json", curves,
                                        out / "report", cfg.report.bin_width,
                                        cfg.report.figures and not args.no_figures,
                                        out / "trace.csv")
            for p in paths.values():
                print(p)
        elif args.command == "run-all":
            print(json.dumps(pipeline.run_all(cfg), indent=1))
    except (CurriculumError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
