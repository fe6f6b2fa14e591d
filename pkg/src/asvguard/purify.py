"""Waveform purifiers.

Every purifier maps a waveform to a same-length waveform clamped to
[-1, 1]. Filters pad with half-sample symmetric reflection
(``d c b a | a b c d | d c b a``); a kernel of even size ``k`` covers
``[i - (k-1)//2, i + k//2]``, e.g. ``[i-1, i+2]`` for ``k = 4``.

Purifiers are parsed from strings such as ``"median:kernel=4"`` or
``"gaussian_noise:snr=25:seed=7"``.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .signal import MelFilterbank, StftConfig, griffin_lim, mel_filterbank, stft_complex

KINDS = ("gaussian_noise", "mean_filter", "median_filter", "gaussian_filter", "quantize",
         "spectral_reconstruct")

_ALIASES = {
    "gaussian_noise": "gaussian_noise", "noise": "gaussian_noise",
    "mean": "mean_filter", "mean_filter": "mean_filter",
    "median": "median_filter", "median_filter": "median_filter",
    "gaussian_filter": "gaussian_filter", "gauss": "gaussian_filter",
    "quantize": "quantize", "quantization": "quantize",
    "spectral": "spectral_reconstruct", "spectral_reconstruct": "spectral_reconstruct",
}
# (key in a purifier string) -> (field, type)
_KEYS = {
    "snr": ("snr_db", float), "snr_db": ("snr_db", float), "seed": ("seed", int),
    "kernel": ("kernel", int), "sigma": ("sigma", float), "q": ("q", int),
    "iters": ("iterations", int), "iterations": ("iterations", int),
}
_ALLOWED = {
    "gaussian_noise": {"snr_db", "seed"}, "mean_filter": {"kernel"}, "median_filter": {"kernel"},
    "gaussian_filter": {"sigma"}, "quantize": {"q"}, "spectral_reconstruct": {"iterations"},
}


class PurifierSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Purifier:
    kind: str
    snr_db: float = 25.0
    seed: int = 0
    kernel: int = 4
    sigma: float = 2.0
    q: int = 16
    iterations: int = 32

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PurifierSpecError(f"unknown purifier kind {self.kind!r}")
        if self.kind in ("mean_filter", "median_filter") and self.kernel < 1:
            raise PurifierSpecError("kernel must be >= 1")
        if self.kind == "gaussian_filter" and not self.sigma > 0:
            raise PurifierSpecError("sigma must be > 0")
        if self.kind == "quantize" and self.q < 2:
            raise PurifierSpecError("q must be >= 2")
        if self.kind == "spectral_reconstruct" and self.iterations < 1:
            raise PurifierSpecError("iterations must be >= 1")
        if self.kind == "gaussian_noise" and not math.isfinite(self.snr_db):
            raise PurifierSpecError("snr_db must be finite")

    @property
    def name(self) -> str:
        if self.kind == "gaussian_noise":
            return f"gaussian_noise:snr={self.snr_db:g}:seed={self.seed}"
        if self.kind == "mean_filter":
            return f"mean:kernel={self.kernel}"
        if self.kind == "median_filter":
            return f"median:kernel={self.kernel}"
        if self.kind == "gaussian_filter":
            return f"gaussian_filter:sigma={self.sigma:g}"
        if self.kind == "quantize":
            return f"quantize:q={self.q}"
        return f"spectral:iters={self.iterations}"

    def __call__(self, wave, stft_cfg: StftConfig | None = None) -> np.ndarray:
        return purify(self, wave, stft_cfg)


def parse_purifier(text: str) -> Purifier:
    parts = [p.strip() for p in text.strip().split(":")]
    kind = _ALIASES.get(parts[0])
    if kind is None:
        raise PurifierSpecError(f"unknown purifier kind {parts[0]!r} in {text!r}")
    kwargs = {}
    for kv in parts[1:]:
        key, sep, value = kv.partition("=")
        if not sep or key not in _KEYS:
            raise PurifierSpecError(f"bad option {kv!r} in {text!r}")
        field, typ = _KEYS[key]
        if field not in _ALLOWED[kind]:
            raise PurifierSpecError(f"option {key!r} does not apply to {kind}")
        try:
            kwargs[field] = typ(value)
        except ValueError:
            raise PurifierSpecError(f"bad value {value!r} for {key!r} in {text!r}") from None
    return Purifier(kind, **kwargs)


def parse_roster(text: str) -> list[Purifier]:
    roster = [parse_purifier(p) for p in text.split(",") if p.strip()]
    if not roster:
        raise PurifierSpecError("empty purifier list")
    names = [p.name for p in roster]
    if len(set(names)) != len(names):
        raise PurifierSpecError(f"duplicate purifiers in {text!r}")
    return roster


# --- primitives --------------------------------------------------------------

def _windows(x: np.ndarray, kernel: int) -> np.ndarray:
    left, right = (kernel - 1) // 2, kernel // 2
    padded = np.pad(x, (left, right), mode="symmetric")
    return np.lib.stride_tricks.sliding_window_view(padded, kernel)


def mean_filter(x, kernel: int) -> np.ndarray:
    return _windows(np.asarray(x, dtype=np.float64), kernel).mean(axis=1)


def median_filter(x, kernel: int) -> np.ndarray:
    # np.median averages the two middle order statistics for even kernels
    return np.median(_windows(np.asarray(x, dtype=np.float64), kernel), axis=1)


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    radius = int(truncate * sigma + 0.5)
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return k / k.sum()


def gaussian_filter(x, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    return _windows(np.asarray(x, dtype=np.float64), 2 * r + 1) @ k


def quantize_sample(x, q: int):
    """``round(x * q) / q`` with ties rounded away from zero."""
    y = np.asarray(x, dtype=np.float64) * q
    out = np.clip(np.sign(y) * np.floor(np.abs(y) + 0.5) / q, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def gaussian_noise_sigma(wave, snr_db: float) -> float:
    power = float(np.mean(np.square(np.asarray(wave, dtype=np.float64))))
    if power == 0.0:
        raise ValueError("zero-power input: SNR is undefined")
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def _noise_rng(seed: int, x: np.ndarray) -> np.random.Generator:
    # noise depends on the input too, so utterances do not share one noise pattern
    return np.random.default_rng([seed, zlib.crc32(x.tobytes())])


def add_gaussian_noise(x, snr_db: float, seed: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sigma = gaussian_noise_sigma(x, snr_db)
    return x + sigma * _noise_rng(seed, x).standard_normal(x.shape)


def pseudo_inverse_mel(fb: MelFilterbank) -> np.ndarray:
    """Filterbank transpose with each mel column scaled to unit sum (bins x mels)."""
    w = fb.weights
    return (w / w.sum(axis=1, keepdims=True)).T


def spectral_reconstruct(wave, stft_cfg: StftConfig | None = None, iterations: int = 32,
                         n_mels: int = 64, fb: MelFilterbank | None = None) -> np.ndarray:
    """Mel-compress the magnitude, map it back to linear bins, and resynthesize with Griffin-Lim."""
    cfg = stft_cfg or StftConfig()
    x = np.asarray(wave, dtype=np.float64)
    fb = fb or _default_fb(cfg, n_mels)
    mag = np.abs(stft_complex(x, cfg))
    linear = (mag @ fb.weights.T) @ pseudo_inverse_mel(fb).T
    y = griffin_lim(linear, cfg, iterations)
    out = np.zeros_like(x)
    m = min(len(x), len(y))
    out[:m] = y[:m]
    return out


_FB_CACHE: dict = {}


def _default_fb(cfg: StftConfig, n_mels: int) -> MelFilterbank:
    key = (cfg, n_mels)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(cfg.sample_rate, cfg.n_fft, n_mels)
    return _FB_CACHE[key]


def purify(p: Purifier, wave, stft_cfg: StftConfig | None = None, clamp: bool = True) -> np.ndarray:
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a mono waveform")
    if p.kind == "gaussian_noise":
        y = add_gaussian_noise(x, p.snr_db, p.seed)
    elif p.kind == "mean_filter":
        y = mean_filter(x, p.kernel)
    elif p.kind == "median_filter":
        y = median_filter(x, p.kernel)
    elif p.kind == "gaussian_filter":
        y = gaussian_filter(x, p.sigma)
    elif p.kind == "quantize":
        y = quantize_sample(x, p.q)
    else:
        y = spectral_reconstruct(x, stft_cfg, p.iterations)
    return np.clip(y, -1.0, 1.0) if clamp else y
