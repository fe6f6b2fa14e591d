"""Framing, STFT/ISTFT, mel filterbanks, log-mel features and Griffin-Lim.

Waveforms are plain 1-D float64 arrays; the sample rate travels with
:class:`StftConfig`. Frames are not centered: frame ``f`` covers samples
``[f * hop, f * hop + win)`` and any trailing remainder is ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class SignalLengthError(ValueError):
    """Input is shorter than one analysis window."""


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.win_length < 1 or self.hop_length < 1:
            raise ValueError("window and hop must span at least one sample")
        if self.hop_length > self.win_length:
            raise ValueError("hop longer than window leaves gaps between frames")
        if self.n_fft < self.win_length:
            raise ValueError(f"n_fft={self.n_fft} shorter than window ({self.win_length} samples)")

    @property
    def win_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @cached_property
    def window(self) -> np.ndarray:
        w = np.hamming(self.win_length)
        w.setflags(write=False)
        return w

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            raise SignalLengthError(
                f"signal has {n_samples} samples, need at least {self.win_length}")
        return 1 + (n_samples - self.win_length) // self.hop_length

    def frame_starts(self, n_frames: int) -> np.ndarray:
        return np.arange(n_frames) * self.hop_length

    def signal_length(self, n_frames: int) -> int:
        """Number of samples covered by ``n_frames`` frames."""
        return (n_frames - 1) * self.hop_length + self.win_length


@dataclass(frozen=True)
class ComplexSpectrogram:
    magnitude: np.ndarray  # frames x bins
    phase: np.ndarray

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise ValueError("magnitude and phase shapes differ")

    @property
    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x bins
    f_min: float
    f_max: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # frames x n_mels
    floor_epsilon: float = field(default=1e-10)


def _as_wave(wave) -> np.ndarray:
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono 1-D waveform, got shape {x.shape}")
    return x


def frame_signal(wave, cfg: StftConfig) -> np.ndarray:
    """Hamming-windowed frames, shape ``(n_frames, win_length)``."""
    x = _as_wave(wave)
    n = cfg.n_frames(len(x))
    idx = cfg.frame_starts(n)[:, None] + np.arange(cfg.win_length)[None, :]
    return x[idx] * cfg.window


def stft_complex(wave, cfg: StftConfig) -> np.ndarray:
    return np.fft.rfft(frame_signal(wave, cfg), n=cfg.n_fft, axis=1)


def stft(wave, cfg: StftConfig) -> ComplexSpectrogram:
    spec = stft_complex(wave, cfg)
    return ComplexSpectrogram(np.abs(spec), np.angle(spec))


def istft(spec, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add inverse with window-squared normalization.

    ``spec`` is a :class:`ComplexSpectrogram` or a complex ``frames x bins``
    array. Samples that no frame covers come back as zero.
    """
    z = spec.complex if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    if z.ndim != 2 or z.shape[1] != cfg.n_bins:
        raise ValueError(f"spectrogram shape {z.shape} does not match n_fft={cfg.n_fft}")
    n_frames = z.shape[0]
    frames = np.fft.irfft(z, n=cfg.n_fft, axis=1)[:, :cfg.win_length]
    w = cfg.window
    length = cfg.signal_length(n_frames) if n_frames else 0
    out = np.zeros(length)
    norm = np.zeros(length)
    for start, frame in zip(cfg.frame_starts(n_frames), frames):
        out[start:start + cfg.win_length] += frame * w
        norm[start:start + cfg.win_length] += w * w
    nz = norm > 0
    out[nz] /= norm[nz]
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int = 16000, n_fft: int = 512, n_mels: int = 64,
                   f_min: float = 20.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular filters with peak 1, centers equally spaced in mel."""
    if f_max is None:
        f_max = sample_rate / 2
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise ValueError(f"invalid frequency range [{f_min}, {f_max}] for sr={sample_rate}")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no FFT bin; "
                         "use fewer mels or a larger n_fft")
    weights.setflags(write=False)
    return MelFilterbank(weights, float(f_min), float(f_max))


def log_mel_features(wave, cfg: StftConfig, fb: MelFilterbank,
                     floor_epsilon: float = 1e-10) -> MelSpectrogram:
    if floor_epsilon <= 0:
        raise ValueError("floor_epsilon must be positive")
    power = np.abs(stft_complex(wave, cfg)) ** 2
    return MelSpectrogram(np.log(floor_epsilon + power @ fb.weights.T), floor_epsilon)


def spectral_convergence(wave, magnitude: np.ndarray, cfg: StftConfig) -> float:
    """``||  |stft(wave)| - M ||_F / ||M||_F``."""
    ref = np.linalg.norm(magnitude)
    got = np.abs(stft_complex(wave, cfg))
    return float(np.linalg.norm(got - magnitude) / ref) if ref > 0 else float(np.linalg.norm(got))


def griffin_lim(magnitude, cfg: StftConfig, iterations: int = 32,
                trace: list | None = None) -> np.ndarray:
    """Zero-phase initialized Griffin-Lim.

    If ``trace`` is given, the spectral convergence of every iterate is
    appended to it. The result is scaled down if its peak exceeds 1.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if not np.all(np.isfinite(mag)):
        raise ValueError("magnitude contains non-finite entries")
    if np.any(mag < 0):
        raise ValueError("magnitude must be non-negative")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    phase = np.zeros_like(mag)
    y = np.zeros(cfg.signal_length(mag.shape[0]))
    for _ in range(iterations):
        y = istft(mag * np.exp(1j * phase), cfg)
        spec = stft_complex(y, cfg)
        phase = np.angle(spec)
        if trace is not None:
            ref = np.linalg.norm(mag)
            trace.append(float(np.linalg.norm(np.abs(spec) - mag) / ref) if ref > 0 else 0.0)
    peak = np.max(np.abs(y)) if y.size else 0.0
    if peak > 1.0:
        y = y / peak
    return y
