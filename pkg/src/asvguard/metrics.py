"""Evaluation arithmetic: EER, FAR/FRR, the purification trade-off and system-level rates.

Accept rule everywhere: a score ``s`` is accepted at threshold ``tau`` iff
``s >= tau``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray

    def __init__(self, target_scores, nontarget_scores):
        t = np.asarray(target_scores, dtype=np.float64).ravel()
        n = np.asarray(nontarget_scores, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(n))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "target_scores", t)
        object.__setattr__(self, "nontarget_scores", n)


def far_frr_at(s: ScoreSet, tau: float) -> tuple[float, float]:
    """FAR over non-targets and FRR over targets; an empty class gives NaN."""
    t, n = s.target_scores, s.nontarget_scores
    if t.size == 0 and n.size == 0:
        raise ValueError("both score classes are empty")
    far = float(np.count_nonzero(n >= tau) / n.size) if n.size else float("nan")
    frr = float(np.count_nonzero(t < tau) / t.size) if t.size else float("nan")
    return far, frr


def operating_points(s: ScoreSet):
    """FAR/FRR on every distinct operating interval.

    Returns ``(thresholds, far, frr)`` where ``thresholds[0]`` is the lowest
    score (everything accepted), ``thresholds[j]`` for ``0 < j < m`` is the
    midpoint between consecutive distinct scores, and ``thresholds[m]`` lies
    above every score.
    """
    t, n = s.target_scores, s.nontarget_scores
    u = np.unique(np.concatenate([t, n]))
    thr = np.concatenate([u[:1], (u[:-1] + u[1:]) / 2, u[-1:] + 1.0])
    # rates on the interval (u[j-1], u[j]] equal those at threshold u[j]
    cut = np.concatenate([u, u[-1:] + 1.0])
    far = (n.size - np.searchsorted(np.sort(n), cut, side="left")) / n.size
    frr = np.searchsorted(np.sort(t), cut, side="left") / t.size
    return thr, far, frr


def compute_eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    On an exact crossing ``FAR == FRR`` the threshold is the midpoint of that
    operating interval. Otherwise the rates are linearly interpolated between
    the two adjacent operating points that bracket the sign change.
    """
    if s.target_scores.size == 0 or s.nontarget_scores.size == 0:
        raise ValueError("EER needs both target and non-target scores")
    thr, far, frr = operating_points(s)
    diff = far - frr  # +1 at the bottom, -1 at the top, non-increasing
    exact = np.flatnonzero(diff == 0)
    if exact.size:
        j = exact[exact.size // 2] if exact.size > 1 else exact[0]
        return float(far[j]), float(thr[j])
    j = int(np.flatnonzero(diff > 0)[-1])
    a, b = diff[j], diff[j + 1]
    w = a / (a - b)
    eer = far[j] + w * (far[j + 1] - far[j])
    tau = thr[j] + w * (thr[j + 1] - thr[j])
    return float(eer), float(tau)


# --- purification trade-off ----------------------------------------------------------

def _scores(model, trials, transform=None) -> ScoreSet:
    tgt, non = [], []
    cache: dict[int, np.ndarray] = {}
    for t in trials:
        key = id(t.enroll)
        if key not in cache:
            cache[key] = model.embed(t.enroll)
        x = t.test if transform is None else transform(t.test)
        (tgt if t.is_target else non).append(model.score_embedded(x, cache[key]))
    return ScoreSet(tgt, non)


def purification_tradeoff(model, purifier, genuine_trials, adversarial_trials) -> tuple[float, float]:
    """EERs with every test utterance purified: ``(gen_eer, adv_eer)``.

    ``adversarial_trials`` carry the attacked waveform as ``test``; see
    :func:`adversarial_trials`.
    """
    if not genuine_trials or not adversarial_trials:
        raise ValueError("need non-empty genuine and adversarial trial lists")
    apply = (lambda x: purifier(x, model.stft_cfg)) if purifier is not None else None
    gen = compute_eer(_scores(model, genuine_trials, apply))[0]
    adv = compute_eer(_scores(model, adversarial_trials, apply))[0]
    return gen, adv


def adversarial_trials(trials, results):
    """Pair attack results with their trials: the attacked waveform becomes ``test``."""
    by_id = {t.trial_id: t for t in trials}
    out = []
    for r in results:
        if r.error is not None:
            continue
        t = by_id[r.trial_id]
        out.append(type(t)(t.trial_id, t.enroll, r.adversarial, t.is_target))
    return out


TRADEOFF_HEADER = "purifier,gen_eer,adv_eer"


def tradeoff_csv(rows) -> str:
    """``rows``: iterable of ``(purifier_name, gen_eer, adv_eer)``."""
    lines = [TRADEOFF_HEADER]
    lines += [f"{name},{gen!r},{adv!r}" for name, gen, adv in rows]
    return "\n".join(lines) + "\n"


def read_tradeoff_csv(text: str) -> list[tuple[str, float, float]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != TRADEOFF_HEADER:
        raise ValueError("not a trade-off CSV")
    rows = []
    for ln in lines[1:]:
        name, gen, adv = ln.rsplit(",", 2)
        rows.append((name, float(gen), float(adv)))
    return rows


# --- system-level evaluation ------------------------------------------------------------

DEFAULT_GEN_FDR_GRID = (0.01, 0.001, 0.0001)


class SplitOverlapError(ValueError):
    """Evaluation trials overlap the detector's calibration trials."""


@dataclass(frozen=True)
class GridRow:
    gen_fdr_requested: float
    gen_fdr_achieved: float       # on the calibration set
    gen_fdr_heldout: float        # on the held-out genuine trials
    tau_det: float
    adv_tdr: float
    system_adv_far: float
    system_adv_frr: float
    no_flag_budget: bool          # floor(gen_fdr * n) == 0: threshold sits above all calibration data


@dataclass(frozen=True)
class DetectorReport:
    name: str
    kind: str
    rows: tuple


@dataclass(frozen=True)
class EvalReport:
    gen_eer: float
    tau_asv: float
    adv_far: float
    adv_frr: float
    counts: dict
    detectors: tuple = ()
    premise: dict = None          # purifier name -> {"gen_mean_d", "adv_mean_d"}
    references: dict = None       # published reference values, non-binding

    def to_dict(self) -> dict:
        return {
            "gen_eer": self.gen_eer, "tau_asv": self.tau_asv,
            "adv_far": self.adv_far, "adv_frr": self.adv_frr,
            "counts": dict(self.counts),
            "detectors": {d.name: {"kind": d.kind, "rows": [r.__dict__.copy() for r in d.rows]}
                          for d in self.detectors},
            "premise": dict(self.premise or {}),
            "references": dict(self.references or {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        out = [f"GenEER {self.gen_eer:.4f}   tau_asv {self.tau_asv:.6f}   "
               f"AdvFAR {self.adv_far:.4f}   AdvFRR {self.adv_frr:.4f}",
               "counts: " + ", ".join(f"{k}={v}" for k, v in sorted(self.counts.items())), ""]
        if self.premise:
            out.append(f"{'purifier':36s} {'mean d gen':>11s} {'mean d adv':>11s}")
            for name, p in self.premise.items():
                out.append(f"{name:36s} {p['gen_mean_d']:11.5f} {p['adv_mean_d']:11.5f}")
            out.append("")
        head = (f"{'detector':36s} {'GenFDR':>8s} {'achieved':>9s} {'held-out':>9s} "
                f"{'AdvTDR':>7s} {'sysFAR':>7s} {'sysFRR':>7s}")
        out.append(head)
        for d in self.detectors:
            for r in d.rows:
                note = "  (k=0)" if r.no_flag_budget else ""
                out.append(f"{d.name:36s} {r.gen_fdr_requested:8.4f} {r.gen_fdr_achieved:9.4f} "
                           f"{r.gen_fdr_heldout:9.4f} {r.adv_tdr:7.4f} {r.system_adv_far:7.4f} "
                           f"{r.system_adv_frr:7.4f}{note}")
        if any(r.no_flag_budget for d in self.detectors for r in d.rows):
            out.append("(k=0): the grid value is below 1/n for this calibration size, so no "
                       "calibration trial may be flagged")
        if self.references:
            out.append("")
            out.append("published reference values (non-binding):")
            for k, v in self.references.items():
                out.append(f"  {k}: {v}")
        return "\n".join(out) + "\n"


def system_eval(detector, calibration_ids, genuine_eval, adversarial_eval, tau_asv: float,
                gen_fdr_grid=DEFAULT_GEN_FDR_GRID, name: str | None = None) -> DetectorReport:
    """Detection plus ASV, per GenFDR grid value.

    ``genuine_eval`` is ``(trial_ids, statistics)`` and ``adversarial_eval`` is
    ``(trial_ids, statistics, scores, is_target)``. Statistics are what the
    detector consumes: scalar ``d`` for a single-purifier detector, rows of
    ``D`` for an ensemble. A trial passes the system only if it is not flagged
    and its score is ``>= tau_asv``.
    """
    from .detect import EnsembleDetector, flag_budget

    gen_ids, gen_stat = genuine_eval
    adv_ids, adv_stat, adv_scores, is_target = adversarial_eval
    cal = set(calibration_ids)
    overlap = cal.intersection(gen_ids) | cal.intersection(adv_ids)
    if overlap:
        raise SplitOverlapError(f"{len(overlap)} evaluation trials were used for calibration, "
                                f"e.g. {sorted(overlap)[0]}")
    for g in gen_fdr_grid:
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"GenFDR grid value {g} outside [0, 1]")
    adv_scores = np.asarray(adv_scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    if len(adv_ids) == 0:
        raise ValueError("no adversarial evaluation trials")
    accepted = adv_scores >= tau_asv
    rows = []
    for g in gen_fdr_grid:
        det = detector.at(g)
        flagged = det.is_adversarial(adv_stat)
        gen_flagged = det.is_adversarial(gen_stat) if len(gen_ids) else np.zeros(0, bool)
        passes = ~flagged & accepted
        non, tgt = ~is_target, is_target
        rows.append(GridRow(
            gen_fdr_requested=float(g),
            gen_fdr_achieved=det.threshold.gen_fdr_achieved,
            gen_fdr_heldout=float(np.mean(gen_flagged)) if gen_flagged.size else float("nan"),
            tau_det=det.threshold.tau_det,
            adv_tdr=float(np.mean(flagged)),
            system_adv_far=float(np.mean(passes[non])) if non.any() else float("nan"),
            system_adv_frr=float(np.mean(~passes[tgt])) if tgt.any() else float("nan"),
            no_flag_budget=flag_budget(g, det.threshold.calibration_size) == 0,
        ))
    kind = "ensemble" if isinstance(detector, EnsembleDetector) else "single"
    label = name or ("ensemble" if kind == "ensemble" else detector.purifier_name)
    return DetectorReport(label, kind, tuple(rows))
