"""Diagonal-covariance Gaussian mixtures fitted by EM."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class EmConfig:
    n_components: int = 2
    max_iters: int = 200
    rel_tol: float = 1e-6
    variance_floor: float = 1e-6
    init_seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be > 0")


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray    # M
    means: np.ndarray      # M x N
    variances: np.ndarray  # M x N
    log_likelihood: float = float("nan")  # mean per-sample, at the final parameters
    iterations: int = 0
    converged: bool = False
    collapsed: bool = False
    trace: tuple = field(default=(), compare=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """``log w_m + log N(x; mu_m, diag var_m)`` for each row of ``x``: shape (n, M)."""
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff * diff / self.variances[None], axis=2)
        logdet = np.sum(np.log(self.variances), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw[None, :] - 0.5 * (self.dim * LOG_2PI + logdet[None, :] + quad)

    def log_density(self, x) -> np.ndarray | float:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {arr.shape[1]}, model has {self.dim}")
        out = logsumexp(self.component_log_pdf(arr), axis=1)
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(), "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "meta": {"log_likelihood": self.log_likelihood, "iterations": self.iterations,
                     "converged": self.converged, "collapsed": self.collapsed},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        meta = d.get("meta", {})
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["means"], dtype=np.float64),
                   np.array(d["variances"], dtype=np.float64),
                   float(meta.get("log_likelihood", float("nan"))), int(meta.get("iterations", 0)),
                   bool(meta.get("converged", False)), bool(meta.get("collapsed", False)))

    def to_json(self) -> str:
        # repr-based float formatting in json round-trips float64 exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        return cls.from_dict(json.loads(text))


def log_density(model: GmmModel, x) -> float:
    return model.log_density(x)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def _m_step(x: np.ndarray, resp: np.ndarray, floor: float):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    safe = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ x) / safe[:, None]
    var = np.empty_like(means)
    for m in range(len(nk)):
        d = x - means[m]
        var[m] = (resp[:, m] @ (d * d)) / safe[m]
    # the floored variance is still the constrained M-step optimum, so EM stays monotone
    return weights, means, np.maximum(var, floor)


def fit_em(samples, cfg: EmConfig = EmConfig()) -> GmmModel:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if dim < 1:
        raise ValueError("samples must have at least one dimension")
    if n < cfg.n_components:
        raise ValueError(f"{n} samples cannot fit {cfg.n_components} components")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    k = cfg.n_components
    collapsed = bool(k > 1 and np.all(x == x[0]))

    if k == 1:
        w, mu, var = _m_step(x, np.ones((n, 1)), cfg.variance_floor)
        model = GmmModel(w, mu, var)
        ll = float(np.mean(model.log_density(x)))
        return GmmModel(w, mu, var, ll, 1, True, collapsed, (ll,))

    rng = np.random.default_rng(cfg.init_seed)
    centers = kmeans_pp_init(x, k, rng)
    # hard assignment to nearest center seeds the first M-step
    lab = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), lab] = 1.0
    w, mu, var = _m_step(x, resp, cfg.variance_floor)

    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        logp = GmmModel(w, mu, var).component_log_pdf(x)
        norm = logsumexp(logp, axis=1)
        ll = float(np.mean(norm))
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.rel_tol * abs(trace[-2]):
            converged = True
            break
        resp = np.exp(logp - norm[:, None])
        w, mu, var = _m_step(x, resp, cfg.variance_floor)
    if not converged:
        ll = float(np.mean(GmmModel(w, mu, var).log_density(x)))
        trace.append(ll)
    if collapsed:
        warnings.warn("all samples identical; mixture collapsed onto the variance floor",
                      RuntimeWarning, stacklevel=2)
    return GmmModel(w, mu, var, trace[-1], it, converged, collapsed, tuple(trace))
