"""ASV and detection headline numbers across corpus seeds.

    python scripts/seed_sensitivity.py --seeds 0 1 2            # attack only, a few seconds per seed
    python scripts/seed_sensitivity.py --seeds 0 1 2 --detect   # plus detectors, about 2 min per seed
"""
import argparse
import json
import tempfile
from pathlib import Path

from asvguard import pipeline
from asvguard.config import ExperimentConfig, load_config


def one_seed(base: ExperimentConfig, seed: int, detect: bool, jobs: int) -> dict:
    cfg = base.replace(corpus_seed=seed, trial_seed=seed, split_seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        pipeline.gen_data(cfg, out)
        pipeline.attack(cfg, out, jobs)
        asv = json.loads((out / "attack" / "asv.json").read_text())
        _, rows, thr = pipeline.load_adversarial(out, cfg)
        far, frr = pipeline.asv_rates(rows, thr.tau_asv)
        res = {"seed": seed, "gen_eer": asv["gen_eer"], "adv_far": far, "adv_frr": frr}
        if detect:
            pipeline.detect_calibrate(cfg, out, jobs)
            pipeline.detect_eval(cfg, out, jobs)
            rep = json.loads((out / "eval" / "detect_report.json").read_text())
            for name, d in rep["detectors"].items():
                res[name] = d["rows"][0]["adv_tdr"]
    return res


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--detect", action="store_true", help="also calibrate and evaluate detectors")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    base = load_config(args.config) if args.config else ExperimentConfig()

    results = [one_seed(base, s, args.detect, args.jobs) for s in args.seeds]
    keys = list(results[0])
    print("\t".join(keys))
    for r in results:
        print("\t".join(str(r[k]) if k == "seed" else f"{r[k]:.4f}" for k in keys))


if __name__ == "__main__":
    main()
