"""Toy differentiable speaker verifier.

The embedding is ``normalize(W @ mean_t(log(eps + fbank @ |rfft(frame_t)|^2)))``
with ``W`` a seeded row-orthonormal projection; the score is the cosine
(dot product of unit embeddings). :meth:`AsvModel.score_gradient` is the
exact reverse-mode derivative of the score with respect to the test samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .signal import MelFilterbank, StftConfig, frame_signal, mel_filterbank


class DegenerateEmbeddingError(ValueError):
    """Pre-normalization embedding norm fell below ``norm_epsilon``."""


def orthonormal_projection(emb_dim: int, n_in: int, seed: int) -> np.ndarray:
    """Seeded ``emb_dim x n_in`` matrix with orthonormal rows, each orthogonal to all-ones.

    Rows orthogonal to the constant vector make the embedding blind to a
    uniform log-energy offset, i.e. to the overall gain of the waveform.
    """
    if emb_dim > n_in - 1:
        raise ValueError(f"emb_dim={emb_dim} must be below input dimension {n_in}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n_in, emb_dim))
    g -= g.mean(axis=0, keepdims=True)
    q, r = np.linalg.qr(g)
    # fix column signs so the result does not depend on LAPACK conventions
    q = q * np.sign(np.diag(r))[None, :]
    return np.ascontiguousarray(q.T)


@dataclass(frozen=True)
class AsvModel:
    stft_cfg: StftConfig
    filterbank: MelFilterbank
    projection: np.ndarray  # emb_dim x n_mels
    floor_epsilon: float = 1e-10
    norm_epsilon: float = 1e-12
    seed: int = field(default=0, compare=False)

    @classmethod
    def from_seed(cls, seed: int = 0, emb_dim: int = 32, n_mels: int = 64,
                  f_min: float = 200.0, f_max: float | None = None,
                  stft_cfg: StftConfig | None = None,
                  floor_epsilon: float = 1e-10, norm_epsilon: float = 1e-12) -> "AsvModel":
        cfg = stft_cfg or StftConfig()
        fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, n_mels, f_min, f_max)
        proj = orthonormal_projection(emb_dim, n_mels, seed)
        proj.setflags(write=False)
        return cls(cfg, fb, proj, floor_epsilon, norm_epsilon, seed)

    @property
    def emb_dim(self) -> int:
        return self.projection.shape[0]

    def describe(self) -> dict:
        """Everything needed to rebuild the model via :meth:`from_seed`."""
        return {
            "seed": self.seed, "emb_dim": self.emb_dim, "n_mels": self.filterbank.n_mels,
            "f_min": self.filterbank.f_min, "f_max": self.filterbank.f_max,
            "sample_rate": self.stft_cfg.sample_rate, "window_ms": self.stft_cfg.window_ms,
            "hop_ms": self.stft_cfg.hop_ms, "n_fft": self.stft_cfg.n_fft,
            "floor_epsilon": self.floor_epsilon, "norm_epsilon": self.norm_epsilon,
        }

    # forward pass, keeping intermediates for the backward pass
    def _forward(self, wave):
        frames = frame_signal(wave, self.stft_cfg)
        spec = np.fft.rfft(frames, n=self.stft_cfg.n_fft, axis=1)
        power = spec.real ** 2 + spec.imag ** 2
        mel = self.floor_epsilon + power @ self.filterbank.weights.T
        pooled = np.log(mel).mean(axis=0)
        v = self.projection @ pooled
        norm = float(np.linalg.norm(v))
        if norm < self.norm_epsilon:
            raise DegenerateEmbeddingError(f"embedding norm {norm:.3g} below {self.norm_epsilon}")
        return v / norm, (spec, mel, norm, len(frames))

    def embed(self, wave) -> np.ndarray:
        return self._forward(wave)[0]

    def score(self, x_t, x_e) -> float:
        return self.score_embedded(x_t, self.embed(x_e))

    def score_embedded(self, x_t, e_enroll: np.ndarray) -> float:
        return float(self.embed(x_t) @ e_enroll)

    def score_gradient(self, x_t, x_e) -> np.ndarray:
        return self.score_and_gradient(x_t, self.embed(x_e))[1]

    def score_and_gradient(self, x_t, e_enroll: np.ndarray) -> tuple[float, np.ndarray]:
        """Score against a precomputed enrollment embedding and its gradient."""
        x = np.asarray(x_t, dtype=np.float64)
        e, (spec, mel, norm, n_frames) = self._forward(x)
        s = float(e @ e_enroll)
        cfg = self.stft_cfg

        g_v = (e_enroll - e * s) / norm          # through v / ||v||
        g_pooled = self.projection.T @ g_v
        g_mel = (g_pooled / n_frames)[None, :] / mel   # mean over frames, then log
        g_power = g_mel @ self.filterbank.weights
        # P_k = |X_k|^2 with X = rfft(y): dL/dy_n = 2 sum_k g_k Re(X_k e^{+2 pi i k n / N});
        # irfft halves bins 1..N/2-1 relative to the endpoints, so double the endpoints.
        z = g_power * spec
        z[:, 0] *= 2.0
        if cfg.n_fft % 2 == 0:
            z[:, -1] *= 2.0
        g_frames = np.fft.irfft(z, n=cfg.n_fft, axis=1)[:, :cfg.win_length] * cfg.n_fft
        g_frames *= cfg.window

        grad = np.zeros_like(x)
        for start, g in zip(cfg.frame_starts(n_frames), g_frames):
            grad[start:start + cfg.win_length] += g
        return s, grad


@dataclass(frozen=True)
class AsvThreshold:
    tau_asv: float
    eer: float
    n_target: int
    n_nontarget: int

    def accepts(self, score: float) -> bool:
        return score >= self.tau_asv


def calibrate_asv_threshold(target_scores, nontarget_scores) -> AsvThreshold:
    """EER operating point over genuine trial scores; accept iff ``s >= tau``."""
    if len(target_scores) == 0 or len(nontarget_scores) == 0:
        raise ValueError("need at least one target and one non-target score")
    eer, tau = metrics.compute_eer(metrics.ScoreSet(target_scores, nontarget_scores))
    return AsvThreshold(tau, eer, len(target_scores), len(nontarget_scores))


def calibrate_asv_threshold_on_trials(model: AsvModel, trials) -> AsvThreshold:
    tgt, non = [], []
    for t in trials:
        (tgt if t.is_target else non).append(model.score(t.test, t.enroll))
    return calibrate_asv_threshold(tgt, non)
