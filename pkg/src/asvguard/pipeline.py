"""Experiment stages communicating through files under one output directory.

Layout::

    out/data/     wav/, manifest.tsv, trials.txt
    out/attack/   wav/<trial>.wav, attack.tsv, asv.json
    out/purify/   <purifier>/<trial>.wav
    out/detect/   detectors.json, split.tsv, calibration.tsv
    out/eval/     detect_report.json, trial_d.tsv
    out/sweep/    tradeoff.csv
    out/report.json, out/report.txt

Every stage directory holds ``stamp.json`` with a digest of the settings
the stage depends on, chained through its upstream stamps. A stage refuses
to read an upstream directory whose stamp does not match the current
configuration.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus, metrics
from .asv import AsvModel, AsvThreshold, calibrate_asv_threshold
from .attack import AttackConfig, attack_trial_set
from .config import ExperimentConfig
from .detect import EnsembleDetector, SingleDetector, fit_ensemble_from_vectors
from .gmm import EmConfig
from .parallel import parallel_map
from .purify import parse_roster, purify

DATA_KEYS = ("corpus_seed", "n_speakers", "utts_per_speaker", "duration_s", "n_target",
             "n_nontarget", "trial_seed")
MODEL_KEYS = ("model_seed", "emb_dim", "n_mels", "f_min", "f_max")
ATTACK_KEYS = MODEL_KEYS + ("epsilon", "alpha")
DETECT_KEYS = MODEL_KEYS + ("roster", "gen_fdr", "split_seed", "em_components", "em_max_iters",
                            "em_tol", "em_variance_floor", "em_seed")
EVAL_KEYS = ("gen_fdr_grid",)
SWEEP_KEYS = ("sweep",)

REFERENCES = {
    "asv_gen_eer": 0.0288, "asv_adv_far": 0.9504, "asv_adv_frr": 0.9612,
    "adv_tdr_gaussian_snr25_at_gen_fdr_0.01": 0.9716,
    "adv_tdr_generation_plus_gaussian_at_gen_fdr_0.01": 0.9863,
}


class StageError(RuntimeError):
    """Missing or stale upstream output, or unusable input data."""


# --- stamps ----------------------------------------------------------------------

def stage_hashes(cfg: ExperimentConfig) -> dict:
    h = {"data": cfg.subset_hash(DATA_KEYS)}
    h["attack"] = cfg.subset_hash(ATTACK_KEYS, (h["data"],))
    h["detect"] = cfg.subset_hash(DETECT_KEYS, (h["data"],))
    h["eval"] = cfg.subset_hash(EVAL_KEYS, (h["attack"], h["detect"]))
    h["sweep"] = cfg.subset_hash(SWEEP_KEYS, (h["attack"],))
    return h


def write_stamp(d: Path, stage: str, digest: str) -> None:
    (d / "stamp.json").write_text(json.dumps({"stage": stage, "hash": digest}, sort_keys=True) + "\n")


def stamp_state(d: Path, digest: str) -> str:
    """``"missing"``, ``"stale"`` or ``"ok"``."""
    p = d / "stamp.json"
    if not p.exists():
        return "missing"
    try:
        return "ok" if json.loads(p.read_text()).get("hash") == digest else "stale"
    except json.JSONDecodeError:
        return "stale"


PRODUCER = {"data": "gen-data", "attack": "attack", "detect": "detect-calibrate",
            "eval": "detect-eval", "sweep": "sweep"}


def require(out: Path, stage: str, cfg: ExperimentConfig) -> Path:
    d = out / stage
    state = stamp_state(d, stage_hashes(cfg)[stage])
    if state == "missing":
        raise StageError(f"no '{stage}' output under {out}; run '{PRODUCER[stage]}' first")
    if state == "stale":
        raise StageError(f"'{stage}' output under {out} is stale (made with different settings); "
                         f"rerun '{PRODUCER[stage]}'")
    return d


# --- shared helpers -----------------------------------------------------------------

def build_model(cfg: ExperimentConfig) -> AsvModel:
    return AsvModel.from_seed(cfg.model_seed, emb_dim=cfg.emb_dim, n_mels=cfg.n_mels,
                              f_min=cfg.f_min, f_max=cfg.f_max)


def load_genuine(out: Path, cfg: ExperimentConfig):
    d = require(out, "data", cfg)
    try:
        trials = corpus.read_trials(d / "trials.txt")
        return corpus.load_trials(trials, d)
    except (OSError, ValueError) as exc:
        raise StageError(f"cannot load trials: {exc}") from exc


def stratified_split(trials, seed: int) -> set:
    """Trial ids of the calibration half, drawn per label."""
    cal = set()
    for label in (True, False):
        ids = sorted(t.trial_id for t in trials if t.is_target == label)
        rng = np.random.default_rng([seed, int(label), 0x5B17])
        cal.update(ids[i] for i in rng.permutation(len(ids))[: len(ids) // 2])
    return cal


def _diff_vector(args):
    model, roster, enroll, test = args
    e = model.embed(enroll)
    s = model.score_embedded(test, e)
    return [abs(s - model.score_embedded(p(test, model.stft_cfg), e)) for p in roster]


def diff_vectors(model, roster, trials, jobs: int) -> np.ndarray:
    if not trials:
        return np.zeros((0, len(roster)))
    rows = parallel_map(_diff_vector, [(model, roster, t.enroll, t.test) for t in trials], jobs)
    return np.array(rows, dtype=np.float64)


# --- stages -------------------------------------------------------------------------

def gen_data(cfg: ExperimentConfig, out: Path) -> str:
    d = out / "data"
    d.mkdir(parents=True, exist_ok=True)
    manifest = corpus.build_corpus(d, cfg.n_speakers, cfg.utts_per_speaker, cfg.duration_s,
                                   cfg.corpus_seed)
    trials = corpus.build_trials(manifest, cfg.n_target, cfg.n_nontarget, cfg.trial_seed)
    corpus.write_trials(d / "trials.txt", trials)
    write_stamp(d, "data", stage_hashes(cfg)["data"])
    return f"gen-data: {len(manifest)} utterances, {len(trials)} trials -> {d}"


@dataclass(frozen=True)
class AttackRow:
    trial_id: str
    is_target: bool
    enroll_path: str
    test_path: str
    adv_path: str
    score_before: float
    score_after: float
    linf: float
    error: str


def quantized_adversarial(original_pcm: np.ndarray, adversarial: np.ndarray, epsilon: float) -> np.ndarray:
    """16-bit version of ``adversarial`` whose offset from ``original_pcm`` stays within budget."""
    limit = math.floor(epsilon * 32768)
    delta = corpus.to_pcm16(adversarial).astype(np.int32) - original_pcm.astype(np.int32)
    pcm = original_pcm.astype(np.int32) + np.clip(delta, -limit, limit)
    return np.clip(pcm, -32768, 32767).astype("<i2")


def attack(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> str:
    data = require(out, "data", cfg)
    trials = corpus.read_trials(data / "trials.txt")
    loaded = load_genuine(out, cfg)
    model = build_model(cfg)
    scores = [model.score(t.test, t.enroll) for t in loaded]
    thr = calibrate_asv_threshold([s for s, t in zip(scores, loaded) if t.is_target],
                                  [s for s, t in zip(scores, loaded) if not t.is_target])
    results = attack_trial_set(model, loaded, AttackConfig(cfg.epsilon, cfg.alpha), jobs)

    d = out / "attack"
    (d / "wav").mkdir(parents=True, exist_ok=True)
    rows = []
    for t, lt, r in zip(trials, loaded, results):
        rel = f"wav/{t.trial_id}.wav"
        if r.error is None:
            pcm = quantized_adversarial(corpus.to_pcm16(lt.test), r.adversarial, cfg.epsilon)
            corpus.write_pcm16(d / rel, pcm)
            x_adv = pcm.astype(np.float64) / 32768.0
            after = model.score(x_adv, lt.enroll)
            linf = float(np.max(np.abs(x_adv - lt.test)))
            rows.append(AttackRow(t.trial_id, t.is_target, t.enroll_path, t.test_path, rel,
                                  r.score_before, after, linf, ""))
        else:
            rows.append(AttackRow(t.trial_id, t.is_target, t.enroll_path, t.test_path, "",
                                  float("nan"), float("nan"), float("nan"), r.error))
    write_attack_table(d / "attack.tsv", rows)
    (d / "asv.json").write_text(json.dumps({"tau_asv": thr.tau_asv, "gen_eer": thr.eer,
                                            "n_target": thr.n_target,
                                            "n_nontarget": thr.n_nontarget}, indent=2) + "\n")
    write_stamp(d, "attack", stage_hashes(cfg)["attack"])
    ok = [r for r in rows if not r.error]
    far, frr = asv_rates(ok, thr.tau_asv)
    return (f"attack: {len(ok)}/{len(rows)} trials attacked, GenEER {thr.eer:.4f}, "
            f"AdvFAR {far:.4f}, AdvFRR {frr:.4f} -> {d}")


def asv_rates(rows, tau: float) -> tuple[float, float]:
    s = metrics.ScoreSet([r.score_after for r in rows if r.is_target],
                         [r.score_after for r in rows if not r.is_target])
    return metrics.far_frr_at(s, tau)


_ATTACK_FIELDS = ("trial_id", "label", "enroll", "test", "adversarial", "score_before",
                  "score_after", "linf", "error")


def write_attack_table(path: Path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(_ATTACK_FIELDS)
        for r in rows:
            w.writerow([r.trial_id, int(r.is_target), r.enroll_path, r.test_path, r.adv_path,
                        repr(r.score_before), repr(r.score_after), repr(r.linf), r.error])


def read_attack_table(path: Path) -> list[AttackRow]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or tuple(rows[0]) != _ATTACK_FIELDS:
        raise StageError(f"{path}: not an attack table")
    return [AttackRow(r[0], r[1] == "1", r[2], r[3], r[4], float(r[5]), float(r[6]), float(r[7]), r[8])
            for r in rows[1:]]


def load_adversarial(out: Path, cfg: ExperimentConfig):
    """Attacked trials (enroll, adversarial test) plus the ASV threshold."""
    d = require(out, "attack", cfg)
    data = out / "data"
    rows = [r for r in read_attack_table(d / "attack.tsv") if not r.error]
    asv = json.loads((d / "asv.json").read_text())
    cache = {}

    def get(path):
        if path not in cache:
            cache[path] = corpus.read_wav(path)
        return cache[path]

    trials = [corpus.LoadedTrial(r.trial_id, get(data / r.enroll_path), get(d / r.adv_path), r.is_target)
              for r in rows]
    thr = AsvThreshold(asv["tau_asv"], asv["gen_eer"], asv["n_target"], asv["n_nontarget"])
    return trials, rows, thr


def purify_stage(cfg: ExperimentConfig, out: Path, purifiers: str | None = None, jobs: int = 1) -> str:
    """Write purified copies of every test utterance (genuine, and adversarial when present)."""
    roster = parse_roster(purifiers or cfg.roster)
    genuine = load_genuine(out, cfg)
    sources = [("genuine", genuine)]
    if stamp_state(out / "attack", stage_hashes(cfg)["attack"]) == "ok":
        sources.append(("adversarial", load_adversarial(out, cfg)[0]))
    d = out / "purify"
    n = 0
    for p in roster:
        safe = p.name.replace(":", "_").replace("=", "")
        for label, trials in sources:
            target = d / safe / label
            target.mkdir(parents=True, exist_ok=True)
            waves = parallel_map(_purify_one, [(p, t.test) for t in trials], jobs)
            for t, y in zip(trials, waves):
                corpus.write_wav(target / f"{t.trial_id}.wav", y)
                n += 1
    return f"purify: {n} files for {len(roster)} purifiers -> {d}"


def _purify_one(args):
    p, x = args
    return purify(p, x)


def detect_calibrate(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> str:
    genuine = load_genuine(out, cfg)
    model = build_model(cfg)
    roster = parse_roster(cfg.roster)
    cal_ids = stratified_split(genuine, cfg.split_seed)
    cal = [t for t in genuine if t.trial_id in cal_ids]
    D = diff_vectors(model, roster, cal, jobs)
    names = [p.name for p in roster]
    singles = [SingleDetector.fit(n, D[:, k], cfg.gen_fdr) for k, n in enumerate(names)]
    em = EmConfig(cfg.em_components, cfg.em_max_iters, cfg.em_tol, cfg.em_variance_floor, cfg.em_seed)
    ens = fit_ensemble_from_vectors(D, names, em, cfg.gen_fdr)

    d = out / "detect"
    d.mkdir(parents=True, exist_ok=True)
    payload = {"singles": [s.to_dict() for s in singles], "ensemble": ens.to_dict()}
    (d / "detectors.json").write_text(json.dumps(payload, indent=2) + "\n")
    with open(d / "split.tsv", "w") as f:
        f.write("trial_id\tlabel\tpart\n")
        for t in genuine:
            f.write(f"{t.trial_id}\t{int(t.is_target)}\t{'calibration' if t.trial_id in cal_ids else 'evaluation'}\n")
    with open(d / "calibration.tsv", "w") as f:
        f.write("trial_id\t" + "\t".join(names) + "\n")
        for t, row in zip(cal, D):
            f.write(t.trial_id + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    write_stamp(d, "detect", stage_hashes(cfg)["detect"])
    parts = [f"{s.purifier_name} tau={s.threshold.tau_det:.5f}" for s in singles]
    return (f"detect-calibrate: {len(cal)} genuine calibration trials, GenFDR {cfg.gen_fdr}; "
            + "; ".join(parts) + f"; ensemble tau={ens.threshold.tau_det:.3f} -> {d}")


def load_detectors(out: Path, cfg: ExperimentConfig):
    d = require(out, "detect", cfg)
    payload = json.loads((d / "detectors.json").read_text())
    singles = [SingleDetector.from_dict(s) for s in payload["singles"]]
    ens = EnsembleDetector.from_dict(payload["ensemble"])
    cal_ids = {line.split("\t")[0] for line in (d / "split.tsv").read_text().splitlines()[1:]
               if line.endswith("\tcalibration")}
    return singles, ens, cal_ids


def detect_eval(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> str:
    genuine = load_genuine(out, cfg)
    adv_trials, _, thr = load_adversarial(out, cfg)
    singles, ens, cal_ids = load_detectors(out, cfg)
    model = build_model(cfg)
    roster = parse_roster(cfg.roster)
    if [p.name for p in roster] != list(ens.roster):
        raise StageError("detector roster does not match the configured roster")

    gen_eval = [t for t in genuine if t.trial_id not in cal_ids]
    D_gen = diff_vectors(model, roster, gen_eval, jobs)
    D_adv_all = diff_vectors(model, roster, adv_trials, jobs)
    held = np.array([t.trial_id not in cal_ids for t in adv_trials])
    adv_held = [t for t, h in zip(adv_trials, held) if h]
    D_adv = D_adv_all[held]
    adv_scores = [model.score(t.test, t.enroll) for t in adv_held]
    labels = [t.is_target for t in adv_held]
    gen_ids = [t.trial_id for t in gen_eval]
    adv_ids = [t.trial_id for t in adv_held]

    cal_D = np.array([s.calibration for s in singles]).T
    grid = cfg.grid()
    reports = []
    for k, s in enumerate(singles):
        reports.append(metrics.system_eval(s, cal_ids, (gen_ids, D_gen[:, k]),
                                           (adv_ids, D_adv[:, k], adv_scores, labels),
                                           thr.tau_asv, grid))
    reports.append(metrics.system_eval(ens, cal_ids, (gen_ids, D_gen), (adv_ids, D_adv, adv_scores, labels),
                                       thr.tau_asv, grid, name="ensemble"))
    gen_all = np.vstack([cal_D, D_gen]) if D_gen.size else cal_D
    premise = {name: {"gen_mean_d": float(gen_all[:, k].mean()), "adv_mean_d": float(D_adv_all[:, k].mean())}
               for k, name in enumerate(ens.roster)}

    d = out / "eval"
    d.mkdir(parents=True, exist_ok=True)
    payload = {"detectors": {r.name: {"kind": r.kind, "rows": [row.__dict__.copy() for row in r.rows]}
                             for r in reports},
               "premise": premise, "tau_asv": thr.tau_asv,
               "counts": {"genuine_eval": len(gen_eval), "adversarial_eval": len(adv_held),
                          "calibration": len(cal_ids)}}
    (d / "detect_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    gen_scores = [model.score(t.test, t.enroll) for t in gen_eval]
    write_trial_d(d / TRIAL_D_NAME, list(ens.roster),
                  [(t.trial_id, "genuine", t.is_target, s, v) for t, s, v in zip(gen_eval, gen_scores, D_gen)]
                  + [(t.trial_id, "adversarial", t.is_target, s, v)
                     for t, s, v in zip(adv_held, adv_scores, D_adv)])
    write_stamp(d, "eval", stage_hashes(cfg)["eval"])
    first = {r.name: r.rows[0].adv_tdr for r in reports}
    return ("detect-eval: AdvTDR at GenFDR %g: " % grid[0]
            + ", ".join(f"{n} {v:.3f}" for n, v in first.items()) + f" -> {d}")


TRIAL_D_NAME = "trial_d.tsv"


def write_trial_d(path: Path, roster: list, rows) -> None:
    """Held-out trials with their ASV score and score differences, one per line."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["trial_id", "kind", "label", "score"] + roster)
        for tid, kind, is_target, score, v in rows:
            w.writerow([tid, kind, int(is_target), repr(float(score))] + [repr(float(x)) for x in v])


def read_trial_d(path: Path):
    """``(roster, rows)`` with rows ``(trial_id, kind, is_target, score, d_array)``."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    roster = rows[0][4:]
    return roster, [(r[0], r[1], r[2] == "1", float(r[3]), np.array([float(x) for x in r[4:]]))
                    for r in rows[1:]]


def sweep(cfg: ExperimentConfig, out: Path, purifiers: str | None = None, jobs: int = 1) -> str:
    genuine = load_genuine(out, cfg)
    adv_trials, _, _ = load_adversarial(out, cfg)
    model = build_model(cfg)
    spec = purifiers or cfg.sweep
    roster = parse_roster(spec)
    rows = parallel_map(_tradeoff_one, [(model, p, genuine, adv_trials) for p in roster], jobs)
    d = out / "sweep"
    d.mkdir(parents=True, exist_ok=True)
    (d / "tradeoff.csv").write_text(metrics.tradeoff_csv(rows))
    # the stamp records the roster actually swept, which may come from --purifiers
    write_stamp(d, "sweep", stage_hashes(cfg.replace(sweep=spec))["sweep"])
    return f"sweep: {len(rows)} purifiers -> {d / 'tradeoff.csv'}"


def _tradeoff_one(args):
    model, p, genuine, adv = args
    gen, adv_eer = metrics.purification_tradeoff(model, p, genuine, adv)
    return p.name, gen, adv_eer


STAGES = ("data", "attack", "detect", "eval", "sweep")


def evaluate(cfg: ExperimentConfig, out: Path, jobs: int = 1, rebuild: bool = False, log=print) -> str:
    """Run whatever stages are missing, then assemble the final report."""
    hashes = stage_hashes(cfg)
    runners = {
        "data": lambda: gen_data(cfg, out),
        "attack": lambda: attack(cfg, out, jobs),
        "detect": lambda: detect_calibrate(cfg, out, jobs),
        "eval": lambda: detect_eval(cfg, out, jobs),
        "sweep": lambda: sweep(cfg, out, None, jobs),
    }
    for stage in STAGES:
        state = stamp_state(out / stage, hashes[stage])
        if state == "stale" and not rebuild:
            raise StageError(f"'{stage}' output under {out} is stale (made with different settings); "
                             f"pass --rebuild to regenerate")
        if state != "ok" or rebuild:
            log(runners[stage]())

    _, rows, thr = load_adversarial(out, cfg)
    far, frr = asv_rates(rows, thr.tau_asv)
    det = json.loads((out / "eval" / "detect_report.json").read_text())
    tradeoff = metrics.read_tradeoff_csv((out / "sweep" / "tradeoff.csv").read_text())
    detectors = tuple(metrics.DetectorReport(name, v["kind"], tuple(metrics.GridRow(**r) for r in v["rows"]))
                      for name, v in det["detectors"].items())
    counts = dict(det["counts"])
    counts.update(attacked=len(rows), target=sum(r.is_target for r in rows),
                  nontarget=sum(not r.is_target for r in rows))
    report = metrics.EvalReport(thr.eer, thr.tau_asv, far, frr, counts, detectors,
                                det["premise"], REFERENCES)
    payload = report.to_dict()
    payload["tradeoff"] = [{"purifier": n, "gen_eer": g, "adv_eer": a} for n, g, a in tradeoff]
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = report.to_text() + "\n" + metrics.tradeoff_csv(tradeoff)
    (out / "report.txt").write_text(text)
    return f"evaluate: GenEER {thr.eer:.4f}, AdvFAR {far:.4f}, AdvFRR {frr:.4f} -> {out / 'report.json'}"

