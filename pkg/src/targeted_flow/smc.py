"""Weighted particle bookkeeping: normalization, ESS and resampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

SYSTEMATIC = "systematic"
MULTINOMIAL = "multinomial"
SCHEMES = (SYSTEMATIC, MULTINOMIAL)


class DegenerateWeightsError(ArithmeticError):
    """Every weight in a set is zero (or not finite); nothing to normalize."""


@dataclass
class ParticleSet:
    states: np.ndarray
    log_weights: np.ndarray
    stream_keys: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.stream_keys is None:
            self.stream_keys = np.arange(len(self.log_weights))
        if len(self.states) != len(self.log_weights):
            raise ValueError("states and log_weights must have the same length")

    def __len__(self):
        return len(self.log_weights)


def _log_weights(obj):
    return obj.log_weights if isinstance(obj, ParticleSet) else np.asarray(obj, dtype=float)


def normalize(log_weights, what: str = "particle set") -> np.ndarray:
    """Normalized weights ``exp(lw - logsumexp(lw))`` along the last axis.

    Accepts a ``ParticleSet`` or raw log-weights, batched over leading axes.
    """
    lw = _log_weights(log_weights)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DegenerateWeightsError(f"{what}: log-weights contain NaN or +inf")
    finite = np.isfinite(lw)
    if not np.all(np.any(finite, axis=-1)):
        raise DegenerateWeightsError(f"{what}: all weights are zero")
    lse = logsumexp(lw, axis=-1, keepdims=True)
    return np.exp(lw - lse)


def ess(weights) -> np.ndarray | float:
    """Effective sample size ``1 / sum(w^2)`` of normalized weights (last axis)."""
    w = np.asarray(weights, dtype=float)
    out = 1.0 / np.sum(w * w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def ess_from_log_weights(log_weights) -> float:
    return ess(normalize(log_weights))


def _cumulative(weights):
    cum = np.cumsum(weights, axis=-1)
    cum[..., -1] = 1.0
    return cum


def systematic_indices(weights, u: float, n: Optional[int] = None) -> np.ndarray:
    """Systematic resampling with a single offset ``u`` in ``[0, 1)``."""
    w = np.asarray(weights, dtype=float)
    n = len(w) if n is None else n
    positions = (u + np.arange(n)) / n
    return np.searchsorted(_cumulative(w), positions, side="right")


def multinomial_indices(weights, u) -> np.ndarray:
    """Inverse-CDF draws for i.i.d. uniforms ``u`` (one ancestor per uniform)."""
    w = np.asarray(weights, dtype=float)
    return np.searchsorted(_cumulative(w), np.asarray(u, dtype=float), side="right")


def resample_indices(weights, scheme: str, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = len(w) if n is None else n
    if scheme == SYSTEMATIC:
        return systematic_indices(w, rng.random(), n)
    if scheme == MULTINOMIAL:
        return multinomial_indices(w, rng.random(n))
    raise ValueError(f"unknown resampling scheme {scheme!r}; expected one of {SCHEMES}")


def resample(ps, scheme: str = SYSTEMATIC, rng: Optional[np.random.Generator] = None,
             n: Optional[int] = None) -> np.ndarray:
    """Ancestor indices drawn proportionally to the weights of ``ps``.

    ``ps`` is a ``ParticleSet`` or an array of unnormalized log-weights.
    After resampling every offspring carries weight ``1 / n``.
    """
    rng = np.random.default_rng() if rng is None else rng
    return resample_indices(normalize(ps), scheme, rng, n)
