"""Adaptive detector: volatility, dynamic baseline and weighted anomaly score.

The core functions work on plain lists. ``AdaptiveDetector`` and
``TrendClassifier`` wrap them in the scikit-learn estimator protocol so they
compose with pipelines and grid search.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InsufficientData
from .metrics import TrendConfig, classify_trend


@dataclass(frozen=True)
class ADFConfig:
    theta: float = 10.0
    score_threshold: float | None = None  # None means "same as theta"
    baseline_window: int = 30
    hour_factors: tuple = (1.0,) * 24
    sigma_floor: float = 1e-9
    shuffle_trials: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hour_factors", tuple(float(f) for f in self.hour_factors))
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError("theta must be finite and > 0")
        if self.score_threshold is not None and not math.isfinite(self.score_threshold):
            raise ValueError("score_threshold must be finite")
        if self.baseline_window < 1:
            raise ValueError("baseline_window must be >= 1")
        if len(self.hour_factors) != 24 or not all(
                math.isfinite(f) and f > 0 for f in self.hour_factors):
            raise ValueError("hour_factors needs 24 finite positive entries")
        if not (math.isfinite(self.sigma_floor) and self.sigma_floor > 0):
            raise ValueError("sigma_floor must be finite and > 0")
        if self.shuffle_trials < 1:
            raise ValueError("shuffle_trials must be >= 1")

    @property
    def tau(self) -> float:
        return self.theta if self.score_threshold is None else self.score_threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hour_factors"] = list(self.hour_factors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ADFConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class ADFResult:
    sigma: float
    c_v: float
    rho_v: float
    rho_r: float
    baseline: float
    deviation: float
    state_value: float
    w1: float
    w2: float
    score: float
    abnormal: bool
    x_t: float = 0.0
    threshold: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ADFResult":
        return cls(**d)


def lag1_autocorr(v: Sequence[float]) -> float:
    """Lag-1 autocorrelation; 0 for series that are too short or constant."""
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        return 0.0
    c = v - v.mean()
    den = float(np.dot(c, c))
    if den == 0.0:
        return 0.0
    return float(np.dot(c[:-1], c[1:]) / den)


def _shuffled_autocorr(v: np.ndarray, trials: int, seed: int) -> float:
    if v.size < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(v, (trials, 1)), axis=1)
    c = perms - perms.mean(axis=1, keepdims=True)
    den = np.einsum("ij,ij->i", c, c)
    num = np.einsum("ij,ij->i", c[:, :-1], c[:, 1:])
    safe = np.where(den == 0.0, 1.0, den)
    rho = np.where(den == 0.0, 0.0, num / safe)
    return float(rho.mean())


def volatility(X: Sequence[float], cfg: ADFConfig | None = None):
    """Return (sigma, c_v, rho_v, rho_r) for the window X."""
    cfg = cfg or ADFConfig()
    x = np.asarray(X, dtype=float)
    if x.size < 2:
        raise InsufficientData(2, int(x.size))
    sigma = float(np.std(x, ddof=1))
    v = np.abs(np.diff(x))
    rho_v = lag1_autocorr(v)
    rho_r = _shuffled_autocorr(v, cfg.shuffle_trials, cfg.rng_seed)
    c_v = rho_v / math.copysign(max(abs(rho_r), cfg.sigma_floor), rho_r)
    return sigma, c_v, rho_v, rho_r


def hour_of_day(t: int) -> int:
    return int(t // 3600) % 24


def baseline(history, t: int, cfg: ADFConfig | None = None) -> float:
    """Mean of the last W values strictly before ``t``, scaled by the hour factor.

    ``history`` holds MetricPoint objects or (ts, value) pairs.
    """
    cfg = cfg or ADFConfig()
    prior = []
    for p in history:
        ts, val = (p.ts, p.value) if hasattr(p, "ts") else p
        if ts < t:
            prior.append((ts, val))
    if not prior:
        raise InsufficientData(1, 0)
    prior.sort(key=lambda p: p[0])
    recent = [v for _, v in prior[-cfg.baseline_window:]]
    return math.fsum(recent) / len(recent) * cfg.hour_factors[hour_of_day(t)]


def score_against(X: Sequence[float], x_t: float, b_t: float,
                  cfg: ADFConfig | None = None) -> ADFResult:
    """Steps three to five given an already computed baseline."""
    cfg = cfg or ADFConfig()
    sigma, c_v, rho_v, rho_r = volatility(X, cfg)
    sigma_eff = max(sigma, cfg.sigma_floor)
    deviation = abs(x_t - b_t)
    if deviation <= sigma_eff:
        state = 1.0 - deviation / sigma_eff
    else:
        state = deviation / sigma_eff
    w1 = sigma / (sigma + cfg.theta)
    w2 = 1.0 - w1
    score = w1 * sigma + w2 * state
    return ADFResult(sigma, c_v, rho_v, rho_r, b_t, deviation, state, w1, w2, score,
                     bool(score > cfg.tau), float(x_t), cfg.tau)


def evaluate(X: Sequence[float], x_t: float, t: int, history,
             cfg: ADFConfig | None = None) -> ADFResult:
    cfg = cfg or ADFConfig()
    if len(X) < 2:
        raise InsufficientData(2, len(X))
    return score_against(X, x_t, baseline(history, t, cfg), cfg)


# -- estimator wrappers ----------------------------------------------------

class AdaptiveDetector(BaseEstimator):
    """Estimator form of the detector.

    ``fit`` learns a flat baseline from a 1-D history; each row passed to
    ``score_samples`` is a window whose last entry is the current value.
    ``predict`` returns 1 for abnormal windows and 0 otherwise.
    """

    def __init__(self, theta=10.0, score_threshold=None, baseline_window=30,
                 sigma_floor=1e-9, shuffle_trials=100, rng_seed=0):
        self.theta = theta
        self.score_threshold = score_threshold
        self.baseline_window = baseline_window
        self.sigma_floor = sigma_floor
        self.shuffle_trials = shuffle_trials
        self.rng_seed = rng_seed

    def _config(self) -> ADFConfig:
        return ADFConfig(theta=self.theta, score_threshold=self.score_threshold,
                         baseline_window=self.baseline_window, sigma_floor=self.sigma_floor,
                         shuffle_trials=self.shuffle_trials, rng_seed=self.rng_seed)

    def fit(self, X, y=None):
        history = check_array(np.asarray(X, dtype=float).reshape(-1, 1)).ravel()
        cfg = self._config()
        recent = history[-cfg.baseline_window:]
        self.baseline_ = math.fsum(recent) / len(recent)
        self.config_ = cfg
        return self

    def results(self, X) -> list[ADFResult]:
        check_is_fitted(self, "baseline_")
        windows = check_array(X, ensure_min_features=2)
        return [score_against(row, row[-1], self.baseline_, self.config_) for row in windows]

    def score_samples(self, X):
        return np.array([r.score for r in self.results(X)])

    def decision_function(self, X):
        return self.score_samples(X) - self.config_.tau

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


class TrendClassifier(TransformerMixin, BaseEstimator):
    """Maps each row (a window of values) to its trend code."""

    def __init__(self, flat=0.05, sharp=0.3, noise=0.2):
        self.flat = flat
        self.sharp = sharp
        self.noise = noise

    def fit(self, X, y=None):
        check_array(X, ensure_min_features=2)
        self.config_ = TrendConfig(self.flat, self.sharp, self.noise)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        rows = check_array(X, ensure_min_features=2)
        return np.array([[int(classify_trend(list(r), self.config_))] for r in rows])
