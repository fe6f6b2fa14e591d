"""Run the full pipeline for one configuration file and print the text report.

    python scripts/run_experiment.py --config configs/default.cfg --out runs/default
"""
import argparse
from pathlib import Path

from asvguard import pipeline
from asvguard.config import ExperimentConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--rebuild", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.cfg").write_text(cfg.to_text())
    pipeline.evaluate(cfg, args.out, args.jobs, args.rebuild)
    print()
    print((args.out / "report.txt").read_text())


if __name__ == "__main__":
    main()
