"""Flat ``key = value`` experiment configuration.

One file holds every seed and setting of a run. Blank lines and ``#``
comments are ignored. Unknown keys are an error so typos cannot silently
fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

DEFAULT_ROSTER = "spectral:iters=32,gaussian_noise:snr=25:seed=7,gaussian_noise:snr=20:seed=8"
DEFAULT_SWEEP = ("quantize:q=16,median:kernel=4,gaussian_noise:snr=15:seed=3,"
                 "gaussian_noise:snr=20:seed=3,gaussian_noise:snr=25:seed=3,spectral:iters=32")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # corpus and trials
    corpus_seed: int = 0
    n_speakers: int = 20
    utts_per_speaker: int = 10
    duration_s: float = 2.0
    n_target: int = 100
    n_nontarget: int = 100
    trial_seed: int = 0
    # verifier
    model_seed: int = 0
    emb_dim: int = 32
    n_mels: int = 64
    f_min: float = 200.0
    f_max: float | None = None
    # attack
    epsilon: float = 0.02
    alpha: float = 0.005
    # detection
    roster: str = DEFAULT_ROSTER
    gen_fdr: float = 0.01
    gen_fdr_grid: str = "0.01,0.001,0.0001"
    split_seed: int = 0
    em_components: int = 2
    em_max_iters: int = 200
    em_tol: float = 1e-6
    em_variance_floor: float = 1e-6
    em_seed: int = 0
    # trade-off sweep
    sweep: str = DEFAULT_SWEEP

    def grid(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.gen_fdr_grid.split(",") if v.strip())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def subset_hash(self, keys, upstream: tuple = ()) -> str:
        """Digest of the named settings plus upstream digests; identifies a stage's output."""
        payload = json.dumps({"keys": {k: getattr(self, k) for k in sorted(keys)},
                              "upstream": list(upstream)}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    typ = _TYPES[key]
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "float | None":
            return None if raw in ("", "none", "None") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        values[key.strip()] = coerce(key.strip(), raw)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
