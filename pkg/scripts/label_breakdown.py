"""Split held-out detection rates by trial label for an existing run.

Attacked target trials (score pushed down) and attacked non-target trials
(score pushed up) behave very differently under noise purification; this
prints AdvTDR per label and the score-difference quantiles behind it.

    python scripts/label_breakdown.py runs/default
"""
import argparse
from pathlib import Path

import numpy as np

from asvguard import pipeline
from asvguard.config import ExperimentConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--config", type=Path, default=None, help="configuration the run was made with")
    ap.add_argument("--gen-fdr", type=float, default=0.01)
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ExperimentConfig()

    roster, rows = pipeline.read_trial_d(args.out / "eval" / pipeline.TRIAL_D_NAME)
    singles, ens, _ = pipeline.load_detectors(args.out, cfg)
    dets = {s.purifier_name: s.at(args.gen_fdr) for s in singles}
    dets["ensemble"] = ens.at(args.gen_fdr)

    adv = [r for r in rows if r[1] == "adversarial"]
    gen = [r for r in rows if r[1] == "genuine"]
    D = {lab: np.array([r[4] for r in adv if r[2] == lab]) for lab in (True, False)}
    G = np.array([r[4] for r in gen])
    print(f"held-out: {len(gen)} genuine, {len(D[True])} attacked targets, {len(D[False])} attacked non-targets")
    print(f"{'detector':34s} {'tau':>10s} {'TDR tgt':>8s} {'TDR non':>8s} {'FDR gen':>8s}")
    for name, det in dets.items():
        if name == "ensemble":
            flag = {lab: det.is_adversarial(D[lab]) for lab in D}
            fdr = det.is_adversarial(G)
        else:
            k = roster.index(name)
            flag = {lab: det.is_adversarial(D[lab][:, k]) for lab in D}
            fdr = det.is_adversarial(G[:, k])
        print(f"{name:34s} {det.threshold.tau_det:10.5f} {flag[True].mean():8.3f} "
              f"{flag[False].mean():8.3f} {fdr.mean():8.3f}")
    print()
    print(f"{'purifier':34s} {'group':>10s} {'q10':>9s} {'median':>9s} {'q90':>9s}")
    for k, name in enumerate(roster):
        for label, x in (("genuine", G[:, k]), ("adv tgt", D[True][:, k]), ("adv non", D[False][:, k])):
            q = np.quantile(x, [0.1, 0.5, 0.9])
            print(f"{name:34s} {label:>10s} {q[0]:9.5f} {q[1]:9.5f} {q[2]:9.5f}")


if __name__ == "__main__":
    main()
