"""Synthetic speakers, utterances, trial lists and file I/O.

Every artifact is a deterministic function of the seeds involved, so a
corpus regenerated from the same ``corpus_seed`` is byte-identical.
"""
from __future__ import annotations

import csv
import os
import wave as _wave
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

SAMPLE_RATE = 16000
MIN_DURATION_S = 0.5
PEAK = 0.7


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SpeakerParams:
    speaker_id: str
    f0_hz: float
    formants: tuple[tuple[float, float], ...]  # (center Hz, bandwidth Hz) x 3
    vibrato_rate: float
    vibrato_depth: float  # fraction of f0
    breathiness: float
    tilt: float  # harmonic amplitude ~ h ** -tilt


# Speaker ranges are kept narrow around a shared vowel so that cross-speaker
# embedding angles stay within reach of a small attack budget while
# same-speaker utterances remain tightly clustered.
FORMANT_CENTERS = (600.0, 1700.0, 3150.0)
FORMANT_SPREAD = (30.0, 60.0, 60.0)
BANDWIDTH_RANGES = ((70.0, 90.0), (100.0, 140.0), (150.0, 250.0))
TILT_RANGE = (1.1, 1.3)
BREATH_RANGE = (0.1, 0.2)
VIBRATO_RATE_RANGE = (1.0, 2.0)
VIBRATO_DEPTH_RANGE = (0.15, 0.25)
ENVELOPE_FLOOR = 0.6     # syllabic envelope swings between this and 1
NOISE_FLOOR_DB = -13.0   # white recording noise relative to the voiced component
F0_JITTER = 0.02         # per-utterance relative drift of f0 and formants
FORMANT_JITTER = 0.02


F0_RANGE = (90.0, 260.0)
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def speaker_f0(corpus_seed: int, index: int) -> float:
    """Golden-ratio sequence over the f0 range from a seeded offset.

    Independent uniform draws put two of twenty speakers within a few cents
    of each other now and then; the Kronecker sequence keeps every pair of
    the first ``n`` speakers roughly ``range / (2.6 n)`` apart.
    """
    offset = np.random.default_rng([corpus_seed, 0xF0]).uniform()
    lo, hi = F0_RANGE
    return float(lo + (hi - lo) * ((offset + index * _GOLDEN) % 1.0))


def speaker_params(corpus_seed: int, index: int) -> SpeakerParams:
    rng = np.random.default_rng([corpus_seed, index, 0x5EED])
    f0 = speaker_f0(corpus_seed, index)
    c, half = np.array(FORMANT_CENTERS), np.array(FORMANT_SPREAD)
    centers = rng.uniform(c - half, c + half)
    lo, hi = np.array(BANDWIDTH_RANGES).T
    bws = rng.uniform(lo, hi)
    return SpeakerParams(
        speaker_id=f"spk{index:03d}",
        f0_hz=float(f0),
        formants=tuple((float(f), float(b)) for f, b in zip(centers, bws)),
        # slow and deep: closer to an intonation contour than a singer's vibrato,
        # which smears the harmonic ripple that would otherwise dominate the embedding
        vibrato_rate=float(rng.uniform(*VIBRATO_RATE_RANGE)),
        vibrato_depth=float(rng.uniform(*VIBRATO_DEPTH_RANGE)),
        breathiness=float(rng.uniform(*BREATH_RANGE)),
        tilt=float(rng.uniform(*TILT_RANGE)),
    )


def _resonator(x: np.ndarray, freq: float, bw: float, sr: int) -> np.ndarray:
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    gain = 1 - r  # keeps the peak gain roughly level across bandwidths
    return lfilter([gain], a, x)


def _unit_rms(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x))


def synth_utterance(sp: SpeakerParams, duration_s: float = 2.0, utterance_seed: int = 0,
                    sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Harmonic source with vibrato through a formant cascade, plus breath noise and a noise floor."""
    if duration_s < MIN_DURATION_S:
        raise ValueError(f"duration {duration_s}s below minimum {MIN_DURATION_S}s")
    rng = np.random.default_rng([utterance_seed, 0xA0D10])
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    f0 = sp.f0_hz * (1 + rng.uniform(-F0_JITTER, F0_JITTER))
    vib_phase = rng.uniform(0, 2 * np.pi)
    inst_f0 = f0 * (1 + sp.vibrato_depth * np.sin(2 * np.pi * sp.vibrato_rate * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(inst_f0) / sample_rate
    n_harm = int((sample_rate / 2 * 0.95) // (f0 * (1 + sp.vibrato_depth)))
    h = np.arange(1, n_harm + 1)
    h_phase = rng.uniform(0, 2 * np.pi, size=n_harm)
    voiced = (h[:, None] ** -sp.tilt * np.sin(h[:, None] * phase[None, :] + h_phase[:, None])).sum(axis=0)
    for f, bw in sp.formants:
        voiced = _resonator(voiced, f * (1 + rng.uniform(-FORMANT_JITTER, FORMANT_JITTER)), bw, sample_rate)

    # breath: noise through the same tract with broadened resonances
    breath = rng.standard_normal(n)
    for f, bw in sp.formants:
        breath = _resonator(breath, f, 3 * bw, sample_rate)
    floor = rng.standard_normal(n)
    x = (_unit_rms(voiced) + sp.breathiness * _unit_rms(breath)
         + 10 ** (NOISE_FLOOR_DB / 20) * _unit_rms(floor))

    # syllable-rate amplitude envelope
    env_rate = rng.uniform(2.5, 4.5)
    env = ENVELOPE_FLOOR + (1 - ENVELOPE_FLOOR) * np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi)) ** 2
    x = x * env
    return PEAK * x / np.max(np.abs(x))


# --- WAV I/O -----------------------------------------------------------------

def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono waveforms can be written")
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > 1.0:
        raise ValueError("samples must be finite and within [-1, 1]")
    write_pcm16(path, to_pcm16(x), sample_rate)


def to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_pcm16(path, pcm: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    with _wave.open(os.fspath(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(np.asarray(pcm, dtype="<i2").tobytes())


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    try:
        with _wave.open(os.fspath(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            data = w.readframes(n)
    except (_wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected 1 channel, found {channels}")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    if rate != sample_rate:
        raise WavFormatError(f"{path}: expected sample rate {sample_rate}, found {rate}")
    if n == 0:
        raise WavFormatError(f"{path}: no audio frames")
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0


# --- corpus and trials -------------------------------------------------------

class Utterance(NamedTuple):
    speaker_id: str
    utt_id: str
    path: str  # relative to the corpus root
    duration: float


@dataclass(frozen=True)
class Trial:
    trial_id: str
    enroll_path: str
    test_path: str
    is_target: bool


class LoadedTrial(NamedTuple):
    trial_id: str
    enroll: np.ndarray
    test: np.ndarray
    is_target: bool


MANIFEST_NAME = "manifest.tsv"


def build_corpus(out_dir, n_speakers: int = 20, utts_per_speaker: int = 10,
                 duration_s: float = 2.0, corpus_seed: int = 0) -> list[Utterance]:
    if n_speakers < 2 or utts_per_speaker < 2:
        raise ValueError("need at least 2 speakers with 2 utterances each")
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    manifest = []
    for i in range(n_speakers):
        sp = speaker_params(corpus_seed, i)
        for j in range(utts_per_speaker):
            utt_id = f"{sp.speaker_id}_u{j:02d}"
            x = synth_utterance(sp, duration_s, utterance_seed=corpus_seed * 1_000_003 + i * 1000 + j)
            rel = f"wav/{utt_id}.wav"
            write_wav(out / rel, x)
            manifest.append(Utterance(sp.speaker_id, utt_id, rel, float(duration_s)))
    write_manifest(out / MANIFEST_NAME, manifest)
    return manifest


def write_manifest(path, rows: list[Utterance]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["speaker_id", "utt_id", "path", "duration"])
        for r in rows:
            w.writerow([r.speaker_id, r.utt_id, r.path, repr(r.duration)])


def read_manifest(path) -> list[Utterance]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0] != ["speaker_id", "utt_id", "path", "duration"]:
        raise ValueError(f"{path}: not a corpus manifest")
    return [Utterance(r[0], r[1], r[2], float(r[3])) for r in rows[1:]]


def build_trials(manifest: list[Utterance], n_target: int = 100, n_nontarget: int = 100,
                 seed: int = 0) -> list[Trial]:
    """Sample ordered (enroll, test) pairs without replacement."""
    utts = sorted(manifest, key=lambda u: u.utt_id)
    spk = np.array([u.speaker_id for u in utts])
    ii, jj = np.meshgrid(np.arange(len(utts)), np.arange(len(utts)), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    distinct = ii != jj
    same = distinct & (spk[ii] == spk[jj])
    cross = spk[ii] != spk[jj]
    tgt_pairs = np.flatnonzero(same)
    non_pairs = np.flatnonzero(cross)
    if n_target > tgt_pairs.size or n_nontarget > non_pairs.size:
        raise ValueError(f"requested {n_target}/{n_nontarget} trials but only "
                         f"{tgt_pairs.size}/{non_pairs.size} pairs exist")
    rng = np.random.default_rng([seed, 0x7219])
    picked = [(p, True) for p in rng.choice(tgt_pairs, n_target, replace=False)]
    picked += [(p, False) for p in rng.choice(non_pairs, n_nontarget, replace=False)]
    order = rng.permutation(len(picked))
    trials = []
    for k, idx in enumerate(order):
        p, is_target = picked[idx]
        trials.append(Trial(f"t{k:05d}", utts[ii[p]].path, utts[jj[p]].path, bool(is_target)))
    return trials


def write_trials(path, trials: list[Trial]) -> None:
    """One trial per line: ``label enroll_path test_path`` (1 target, 0 non-target)."""
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{int(t.is_target)} {t.enroll_path} {t.test_path}\n")


def read_trials(path) -> list[Trial]:
    trials = []
    with open(path) as f:
        for k, line in enumerate(f):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{k + 1}: expected 'label enroll test'")
            trials.append(Trial(f"t{len(trials):05d}", parts[1], parts[2], parts[0] == "1"))
    return trials


def load_trials(trials: list[Trial], root, sample_rate: int = SAMPLE_RATE) -> list[LoadedTrial]:
    root = Path(root)
    cache: dict[str, np.ndarray] = {}

    def get(rel):
        if rel not in cache:
            cache[rel] = read_wav(root / rel, sample_rate)
            cache[rel].setflags(write=False)
        return cache[rel]

    return [LoadedTrial(t.trial_id, get(t.enroll_path), get(t.test_path), t.is_target) for t in trials]
