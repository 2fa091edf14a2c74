"""``fpdm`` command line: one subcommand per pipeline stage.

Settings resolve in three layers: built-in defaults, then the ``--config``
JSON file, then explicit flags. Exit codes: 0 success, 2 configuration error,
3 missing or mismatched prerequisite, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..denoiser.model import ArchitectureMismatch
from ..denoiser.train import TrainingDivergence
from ..forward import NumericFailure
from ..schedule import ConfigurationError
from ..segmentation import SamMode
from . import runner
from .artifacts import PrerequisiteError
from .config import ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_NUMERIC = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--workers", type=int, metavar="N")
    p.add_argument("--encoding", choices=["ddpm", "ddim"])
    p.add_argument("--backend", metavar="oracle|checkpoint:PATH")
    p.add_argument("--stride", type=int, metavar="N")
    p.add_argument("--sam-mode", choices=[m.value for m in SamMode])
    p.add_argument("--out", metavar="DIR")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpdm", description="Forward-process anomaly segmentation harness")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    helps = {
        "generate": "write the phantom dataset and its manifest",
        "train": "train the conditional denoiser and save a checkpoint",
        "calibrate": "select guidance, cosine threshold and M_max on the validation split",
        "infer": "segment the test split and write maps, masks and traces",
        "evaluate": "score inference outputs in the mixed and unhealthy setups",
        "ablate": "sweep one hyperparameter axis and write its curve",
        "baseline": "run the reconstruction baseline over its noise-scale grid",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "ablate":
            sp.add_argument("--axis", required=True, choices=runner.ABLATION_AXES)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, encoding=args.encoding, backend=args.backend,
                             stride=args.stride, sam_mode=args.sam_mode, out=args.out)
    return cfg.validate()


def _setup_logging() -> None:
    level = os.environ.get("FPDM_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f"FPDM_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(args: argparse.Namespace) -> str:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "ablate":
        path = runner.cmd_ablate(cfg, args.axis)
    else:
        path = getattr(runner, f"cmd_{cmd}")(cfg)
    return str(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        out = run(args)
    except (ConfigurationError, ArchitectureMismatch) as exc:
        print(f"fpdm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"fpdm: prerequisite error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (NumericFailure, TrainingDivergence) as exc:
        print(f"fpdm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
