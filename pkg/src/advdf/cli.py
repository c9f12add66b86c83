"""Command-line interface.

Subcommands: synth-data, train, whitebox, transfer, adv-train, report.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import bench
from .adaptive import AdversarialTrainingAborted
from .attacks import NonFiniteGradientError, ZeroGradientError
from .audio_io import AudioIOError, ManifestError
from .bench import ConfigError, OutputExistsError
from .models import CheckpointError
from .training import TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (AudioIOError, ManifestError, CheckpointError, OutputExistsError,
                FileNotFoundError, ValueError)
_NUMERIC_ERRORS = (TrainingDivergedError, AdversarialTrainingAborted,
                   ZeroGradientError, NonFiniteGradientError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advdf",
                     description="Adversarial robustness workbench for compact "
                                 "audio deepfake detectors")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite an existing non-empty output directory")

    add_common(sub.add_parser("synth-data", help="generate the synthetic corpus"))
    add_common(sub.add_parser("train", help="train one detector"))
    add_common(sub.add_parser("whitebox", help="white-box attack benchmark"))
    p_tr = sub.add_parser("transfer", help="transferability benchmark")
    add_common(p_tr)
    p_tr.add_argument("--mfcc-attacker", action="store_true",
                      help="include the MFCC front-end attack model")
    add_common(sub.add_parser("adv-train", help="adaptive adversarial fine-tuning"))
    p_rep = sub.add_parser("report", help="merge runs into CSV + Markdown tables")
    p_rep.add_argument("run_dirs", nargs="+", help="completed run directories")
    p_rep.add_argument("--out", default="report")
    p_rep.add_argument("--force", action="store_true")
    return parser


def _load(args) -> bench.RunConfig:
    cfg = bench.load_config(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = int(args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "synth-data":
            path = bench.cmd_synth_data(_load(args), args.out, args.force)
            print(f"manifest written: {path}")
        elif args.command == "train":
            path = bench.cmd_train(_load(args), args.out, args.force)
            print(f"checkpoint written: {path}")
        elif args.command == "whitebox":
            rows = bench.cmd_whitebox(_load(args), args.out, args.force)
            print(f"{len(rows)} white-box rows written")
        elif args.command == "transfer":
            rows = bench.cmd_transfer(_load(args), args.out, args.force,
                                      mfcc_attacker=args.mfcc_attacker)
            print(f"{len(rows)} transfer rows written")
        elif args.command == "adv-train":
            path = bench.cmd_advtrain(_load(args), args.out, args.force)
            print(f"fine-tuned checkpoint written: {path}")
        elif args.command == "report":
            path = bench.cmd_report(args.run_dirs, args.out, args.force)
            print(f"report written: {path}")
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
