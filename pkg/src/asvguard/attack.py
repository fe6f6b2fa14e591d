"""Basic iterative method (BIM) against the toy verifier."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asv import AsvModel
from .parallel import parallel_map


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.02
    alpha: float = 0.005

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    @property
    def iterations(self) -> int:
        return math.ceil(self.epsilon / self.alpha)


@dataclass(frozen=True)
class AdversarialResult:
    trial_id: str
    is_target: bool
    adversarial: np.ndarray
    original: np.ndarray
    iterations_run: int
    score_before: float
    score_after: float
    error: str | None = None

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.adversarial - self.original), initial=0.0))


def clip_perturbation(candidate, original, epsilon: float) -> np.ndarray:
    """Project onto the l-inf ball of radius ``epsilon`` around ``original``, then onto [-1, 1]."""
    c = np.asarray(candidate, dtype=np.float64)
    o = np.asarray(original, dtype=np.float64)
    if c.shape != o.shape:
        raise ValueError(f"length mismatch: {c.shape} vs {o.shape}")
    return np.clip(np.minimum(np.maximum(c, o - epsilon), o + epsilon), -1.0, 1.0)


def bim_attack(model: AsvModel, x_t, x_e, cfg: AttackConfig, is_target: bool,
               trial_id: str = "") -> AdversarialResult:
    """Signed-gradient steps of size alpha, pushing target scores down and non-target scores up.

    sign(0) is 0; an all-zero gradient stops the loop early.
    """
    original = np.asarray(x_t, dtype=np.float64)
    e_enroll = model.embed(x_e)
    direction = -1.0 if is_target else 1.0
    x = original.copy()
    score_before = model.score_embedded(original, e_enroll)
    done = 0
    for _ in range(cfg.iterations):
        _, grad = model.score_and_gradient(x, e_enroll)
        step = np.sign(grad)
        if not step.any():
            break
        x = clip_perturbation(x + cfg.alpha * direction * step, original, cfg.epsilon)
        done += 1
    score_after = model.score_embedded(x, e_enroll) if done else score_before
    return AdversarialResult(trial_id, bool(is_target), x, original, done, score_before, score_after)


def _attack_one(args):
    model, trial, cfg = args
    try:
        return bim_attack(model, trial.test, trial.enroll, cfg, trial.is_target, trial.trial_id)
    except Exception as exc:  # collected per trial, the batch carries on
        nan = float("nan")
        return AdversarialResult(trial.trial_id, trial.is_target, np.asarray(trial.test),
                                 np.asarray(trial.test), 0, nan, nan, error=f"{type(exc).__name__}: {exc}")


def attack_trial_set(model: AsvModel, trials, cfg: AttackConfig, jobs: int = 1) -> list[AdversarialResult]:
    """One result per trial in input order; failures are recorded in ``result.error``."""
    if not trials:
        raise ValueError("empty trial list")
    return parallel_map(_attack_one, [(model, t, cfg) for t in trials], jobs)
