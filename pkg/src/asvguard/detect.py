"""Score-difference detection of adversarial trials.

A purifier ``p`` turns the test utterance into ``p(x_t)``; the detection
statistic is the score variation ``d = |s - s'|``. The single-purifier
detector flags ``d > tau``; the ensemble detector fits a GMM to genuine
score-difference vectors and flags vectors whose log-likelihood is not
strictly above ``tau``. Both thresholds come from genuine data only, at a
requested false detection rate on genuine trials (GenFDR).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from .asv import AsvModel
from .gmm import EmConfig, GmmModel, fit_em
from .purify import Purifier

UPPER = "upper"
LOWER = "lower"


class Verdict(str, Enum):
    GENUINE = "genuine"
    ADVERSARIAL = "adversarial"


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreDiff:
    d: float
    purifier_name: str
    trial_id: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.d) and self.d >= 0):
            raise ValueError(f"score difference must be finite and >= 0, got {self.d}")


@dataclass(frozen=True)
class ScoreDiffVector:
    values: tuple
    roster: tuple
    trial_id: str = ""

    def __post_init__(self):
        if len(self.values) != len(self.roster):
            raise ValueError("vector length must match the roster")
        if not all(math.isfinite(v) and v >= 0 for v in self.values):
            raise ValueError("score differences must be finite and >= 0")

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class DetectionThreshold:
    tau_det: float
    direction: str
    gen_fdr_requested: float
    gen_fdr_achieved: float
    calibration_size: int

    def __post_init__(self):
        if self.direction not in (UPPER, LOWER):
            raise ValueError(f"direction must be {UPPER!r} or {LOWER!r}")

    def to_dict(self) -> dict:
        return {"tau_det": self.tau_det, "direction": self.direction,
                "gen_fdr_requested": self.gen_fdr_requested,
                "gen_fdr_achieved": self.gen_fdr_achieved,
                "calibration_size": self.calibration_size}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionThreshold":
        return cls(float(d["tau_det"]), d["direction"], float(d["gen_fdr_requested"]),
                   float(d["gen_fdr_achieved"]), int(d["calibration_size"]))


# --- calibration ---------------------------------------------------------------

def flag_budget(gen_fdr: float, n: int) -> int:
    """``floor(gen_fdr * n)``, reading ``gen_fdr`` as the decimal it prints as.

    ``0.29 * 100`` is ``28.999...`` in binary floating point; going through
    the shortest decimal repr gives the intended 29.
    """
    if not 0.0 <= gen_fdr <= 1.0:
        raise ValueError(f"gen_fdr must lie in [0, 1], got {gen_fdr}")
    return math.floor(Fraction(repr(float(gen_fdr))) * n)


def _upper_threshold(values: np.ndarray, k: int, inclusive: bool = False) -> tuple[float, int]:
    """Threshold with exactly ``j`` values above it, ``j`` the largest achievable <= k.

    "Above" means ``> tau``, or ``>= tau`` when ``inclusive``.
    """
    d = np.sort(values)[::-1]
    n = len(d)
    # ties can make k itself unattainable; drop to the nearest count that separates
    j = k
    while 0 < j < n and d[j - 1] == d[j]:
        j -= 1
    if j == 0:
        top = float(d[0])
        return top + max(0.1 * abs(top), 1e-6), 0
    if j == n:
        bottom = float(d[-1])
        return bottom - max(0.1 * abs(bottom), 1e-6), n
    hi, lo = float(d[j - 1]), float(d[j])
    mid = 0.5 * hi + 0.5 * lo
    # between neighbouring floats the midpoint rounds onto one of them
    if not inclusive and mid >= hi:
        mid = lo
    elif inclusive and mid <= lo:
        mid = hi
    return mid, j


def _check_calibration(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise CalibrationError("calibration list is empty")
    if not np.all(np.isfinite(arr)):
        raise CalibrationError("calibration values must be finite")
    return arr


def calibrate_threshold(d_gen, gen_fdr: float) -> DetectionThreshold:
    """Upper-tail threshold on genuine score differences (flag ``d > tau``)."""
    d = _check_calibration(d_gen)
    tau, j = _upper_threshold(d, flag_budget(gen_fdr, d.size))
    return DetectionThreshold(tau, UPPER, float(gen_fdr), j / d.size, int(d.size))


def calibrate_lower_threshold(p_gen, gen_fdr: float) -> DetectionThreshold:
    """Lower-tail threshold on genuine log-likelihoods (genuine iff ``p > tau``)."""
    p = _check_calibration(p_gen)
    # flagged iff p <= tau, i.e. -p >= -tau
    neg_tau, j = _upper_threshold(-p, flag_budget(gen_fdr, p.size), inclusive=True)
    return DetectionThreshold(-neg_tau, LOWER, float(gen_fdr), j / p.size, int(p.size))


def achieved_fdr(values, t: DetectionThreshold) -> float:
    """Fraction of ``values`` the threshold would flag."""
    return float(np.mean(flags(values, t)))


def flags(values, t: DetectionThreshold) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v > t.tau_det if t.direction == UPPER else ~(v > t.tau_det)


# --- single-purifier detection ------------------------------------------------------

def detect_single(d: ScoreDiff | float, t: DetectionThreshold) -> Verdict:
    if t.direction != UPPER:
        raise ValueError("single-purifier detection needs an upper-direction threshold")
    value = d.d if isinstance(d, ScoreDiff) else float(d)
    return Verdict.ADVERSARIAL if value > t.tau_det else Verdict.GENUINE


def adv_tdr(d_adv, t: DetectionThreshold) -> float:
    if t.direction != UPPER:
        raise ValueError("adv_tdr needs an upper-direction threshold")
    d = np.asarray(d_adv, dtype=np.float64)
    if d.size == 0:
        raise ValueError("adversarial list is empty")
    return float(np.mean(d > t.tau_det))


def score_difference(model: AsvModel, p: Purifier, x_t, x_e=None, *, e_enroll=None,
                     base_score: float | None = None, trial_id: str = "") -> ScoreDiff:
    """``|score(x_t, x_e) - score(p(x_t), x_e)|``; pass ``e_enroll`` to skip re-embedding.

    ``p`` is any callable ``p(wave, stft_cfg)`` with a ``name``, normally a :class:`Purifier`.
    """
    e = model.embed(x_e) if e_enroll is None else e_enroll
    s = model.score_embedded(x_t, e) if base_score is None else base_score
    s_p = model.score_embedded(p(x_t, model.stft_cfg), e)
    return ScoreDiff(abs(s - s_p), p.name, trial_id)


def score_diff_vector(model: AsvModel, roster: Sequence[Purifier], x_t, x_e=None, *,
                      e_enroll=None, trial_id: str = "") -> ScoreDiffVector:
    if not roster:
        raise ValueError("roster is empty")
    e = model.embed(x_e) if e_enroll is None else e_enroll
    s = model.score_embedded(x_t, e)
    values = tuple(score_difference(model, p, x_t, e_enroll=e, base_score=s).d for p in roster)
    return ScoreDiffVector(values, tuple(p.name for p in roster), trial_id)


@dataclass(frozen=True)
class SingleDetector:
    """Threshold on one purifier's score difference, keeping the calibration data."""
    purifier_name: str
    threshold: DetectionThreshold
    calibration: tuple = field(default=(), compare=False, repr=False)

    @classmethod
    def fit(cls, purifier_name: str, d_gen, gen_fdr: float) -> "SingleDetector":
        d = _check_calibration(d_gen)
        return cls(purifier_name, calibrate_threshold(d, gen_fdr), tuple(d.tolist()))

    def at(self, gen_fdr: float) -> "SingleDetector":
        return SingleDetector.fit(self.purifier_name, self.calibration, gen_fdr)

    def is_adversarial(self, d) -> np.ndarray:
        return np.asarray(d, dtype=np.float64) > self.threshold.tau_det

    def to_dict(self) -> dict:
        return {"type": "single", "purifier": self.purifier_name,
                "threshold": self.threshold.to_dict(), "calibration": list(self.calibration)}

    @classmethod
    def from_dict(cls, d: dict) -> "SingleDetector":
        return cls(d["purifier"], DetectionThreshold.from_dict(d["threshold"]),
                   tuple(float(v) for v in d.get("calibration", ())))


# --- ensemble detection ---------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleDetector:
    roster: tuple
    gmm: GmmModel
    threshold: DetectionThreshold
    calibration: tuple = field(default=(), compare=False, repr=False)  # genuine log-likelihoods

    def __post_init__(self):
        if self.gmm.dim != len(self.roster):
            raise ValueError(f"GMM dimension {self.gmm.dim} does not match roster size {len(self.roster)}")
        if self.threshold.direction != LOWER:
            raise ValueError("ensemble threshold must be lower-direction")

    def log_likelihood(self, vectors) -> np.ndarray:
        return np.atleast_1d(self.gmm.log_density(np.atleast_2d(np.asarray(vectors, dtype=np.float64))))

    def is_adversarial(self, vectors) -> np.ndarray:
        return ~(self.log_likelihood(vectors) > self.threshold.tau_det)

    def at(self, gen_fdr: float) -> "EnsembleDetector":
        """Same GMM, threshold recalibrated on the stored genuine likelihoods."""
        return EnsembleDetector(self.roster, self.gmm,
                                calibrate_lower_threshold(self.calibration, gen_fdr), self.calibration)

    def to_dict(self) -> dict:
        return {"type": "ensemble", "roster": list(self.roster), "gmm": self.gmm.to_dict(),
                "threshold": self.threshold.to_dict(), "calibration": list(self.calibration)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleDetector":
        return cls(tuple(d["roster"]), GmmModel.from_dict(d["gmm"]),
                   DetectionThreshold.from_dict(d["threshold"]),
                   tuple(float(v) for v in d.get("calibration", ())))


def fit_ensemble_from_vectors(vectors, roster: Sequence[str], em_cfg: EmConfig = EmConfig(),
                              gen_fdr: float = 0.01) -> EnsembleDetector:
    """Fit the GMM to genuine score-difference vectors and calibrate the lower-tail threshold."""
    x = np.asarray([v.values if isinstance(v, ScoreDiffVector) else v for v in vectors],
                   dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise CalibrationError("need a non-empty (n, roster size) array of vectors")
    if x.shape[1] != len(roster):
        raise ValueError(f"vectors have {x.shape[1]} entries, roster has {len(roster)}")
    if np.all(x == x[0]):
        raise CalibrationError("degenerate calibration: all score-difference vectors are identical")
    gmm = fit_em(x, em_cfg)
    p = np.atleast_1d(gmm.log_density(x))
    return EnsembleDetector(tuple(roster), gmm, calibrate_lower_threshold(p, gen_fdr),
                            tuple(p.tolist()))


def fit_ensemble(model: AsvModel, roster: Sequence[Purifier], genuine_trials,
                 em_cfg: EmConfig = EmConfig(), gen_fdr: float = 0.01) -> EnsembleDetector:
    """``genuine_trials``: objects with ``test``/``enroll`` waveforms (clean data only)."""
    vectors = [score_diff_vector(model, roster, t.test, t.enroll, trial_id=t.trial_id)
               for t in genuine_trials]
    return fit_ensemble_from_vectors(vectors, [p.name for p in roster], em_cfg, gen_fdr)


def detect_ensemble(det: EnsembleDetector, D: ScoreDiffVector | Sequence[float]) -> Verdict:
    values = D.as_array() if isinstance(D, ScoreDiffVector) else np.asarray(D, dtype=np.float64)
    if values.shape != (len(det.roster),):
        raise ValueError(f"vector of shape {values.shape} does not match roster size {len(det.roster)}")
    p = det.gmm.log_density(values)
    return Verdict.GENUINE if p > det.threshold.tau_det else Verdict.ADVERSARIAL


def detector_from_json(text: str) -> SingleDetector | EnsembleDetector:
    d = json.loads(text)
    return EnsembleDetector.from_dict(d) if d.get("type") == "ensemble" else SingleDetector.from_dict(d)


def detector_to_json(det: SingleDetector | EnsembleDetector) -> str:
    return json.dumps(det.to_dict(), indent=2)
