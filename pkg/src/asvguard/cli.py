"""Command-line front end.

    asvguard gen-data --seed 7 --out runs/a
    asvguard evaluate --config exp.cfg --jobs 4

Settings come from (lowest to highest precedence) built-in defaults, the
``--config`` file, and explicit flags. Exit status is 0 on success, 1 on a
usage error and 2 on a data or precondition error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import pipeline
from .config import ConfigError, ExperimentConfig, coerce, load_config

ENV_OUT = "ASVGUARD_OUT"
DEFAULT_OUT = "runs/default"

_D = pipeline.DATA_KEYS
_A = pipeline.ATTACK_KEYS
_DET = pipeline.DETECT_KEYS
COMMAND_KEYS = {
    "gen-data": _D,
    "attack": _D + _A,
    "purify": _D + _A,
    "detect-calibrate": _D + _DET,
    "detect-eval": _D + _A + _DET + pipeline.EVAL_KEYS,
    "sweep": _D + _A,
    "evaluate": tuple(f.name for f in fields(ExperimentConfig)),
}
HELP = {
    "gen-data": "synthesize the corpus and trial list",
    "attack": "run BIM on every trial and write adversarial WAVs",
    "purify": "write purified copies of the test utterances",
    "detect-calibrate": "fit single-purifier and ensemble detectors on genuine trials",
    "detect-eval": "evaluate the detectors on held-out genuine and adversarial trials",
    "sweep": "purification trade-off sweep (tradeoff.csv)",
    "evaluate": "run any missing stage and write report.json",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asvguard", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", type=Path, help="experiment configuration file (key = value)")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: ${ENV_OUT} or {DEFAULT_OUT})")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for per-trial work")
        for key in dict.fromkeys(keys):
            names = [_flag(key)] + (["--seed"] if key == "corpus_seed" else [])
            p.add_argument(*names, dest=key, default=None, metavar=key.upper())
        if name in ("purify", "sweep"):
            p.add_argument("--purifiers", default=None,
                           help="comma-separated purifier list, e.g. 'median:kernel=4,quantize:q=16'")
        if name == "evaluate":
            p.add_argument("--rebuild", action="store_true", help="regenerate every stage")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k: coerce(k, v) for k, v in vars(args).items()
                 if k in {f.name for f in fields(ExperimentConfig)} and v is not None}
    if args.command == "sweep" and args.purifiers:
        overrides["sweep"] = args.purifiers
    return cfg.replace(**overrides)


def run(argv=None, log=print) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.jobs < 1:
        print("asvguard: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    out = args.out or Path(os.environ.get(ENV_OUT, DEFAULT_OUT))
    try:
        cfg = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "gen-data":
            log(pipeline.gen_data(cfg, out))
        elif cmd == "attack":
            log(pipeline.attack(cfg, out, args.jobs))
        elif cmd == "purify":
            log(pipeline.purify_stage(cfg, out, args.purifiers, args.jobs))
        elif cmd == "detect-calibrate":
            log(pipeline.detect_calibrate(cfg, out, args.jobs))
        elif cmd == "detect-eval":
            log(pipeline.detect_eval(cfg, out, args.jobs))
        elif cmd == "sweep":
            log(pipeline.sweep(cfg, out, None, args.jobs))
        else:
            log(pipeline.evaluate(cfg, out, args.jobs, args.rebuild, log=log))
    except ConfigError as exc:
        print(f"asvguard: error: {exc}", file=sys.stderr)
        return 1
    except (pipeline.StageError, ValueError, OSError) as exc:
        print(f"asvguard: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
