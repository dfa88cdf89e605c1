"""Time-independent Gaussian likelihood ``p(y | x) = N(y; x, s I)`` and its guards."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gmm import LOG_2PI


@dataclass(frozen=True)
class GaussianLikelihood:
    y: tuple[float, ...]
    variance: float
    conjugate = True

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in np.ravel(self.y)))
        if not self.variance > 0:
            raise ValueError(f"likelihood variance must be > 0, got {self.variance}")

    @property
    def dim(self) -> int:
        return len(self.y)

    @property
    def y_array(self) -> np.ndarray:
        return np.asarray(self.y)

    def peak_log_density(self) -> float:
        return -0.5 * self.dim * (LOG_2PI + math.log(self.variance))


@dataclass(frozen=True)
class LikelihoodGuards:
    """Floors and clipping that keep the importance weights bounded.

    ``epsilon2`` is added to every look-ahead likelihood value; ``clip_norm``
    caps the L2 norm of the guidance gradient (``None`` disables clipping).
    """

    epsilon2: float = 1e-12
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon2 > 0:
            raise ValueError(f"epsilon2 must be > 0, got {self.epsilon2}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0 when set, got {self.clip_norm}")

    @classmethod
    def default(cls, dim: int) -> "LikelihoodGuards":
        return cls(epsilon2=1e-12, clip_norm=10.0 * math.sqrt(dim))

    @property
    def log_epsilon2(self) -> float:
        return math.log(self.epsilon2)


def _check_dim(lik: GaussianLikelihood, x: np.ndarray):
    if x.shape[-1] != lik.dim:
        raise ValueError(f"point dimension {x.shape[-1]} does not match observation dimension {lik.dim}")


def log_likelihood(lik: GaussianLikelihood, x):
    x = np.asarray(x, dtype=float)
    _check_dim(lik, x)
    diff = lik.y_array - x
    return lik.peak_log_density() - 0.5 * np.sum(diff * diff, axis=-1) / lik.variance


def floored_log(log_value, epsilon2: float):
    """``log(exp(log_value) + epsilon2)`` without leaving log space."""
    return np.logaddexp(log_value, math.log(epsilon2))


def clip_by_norm(g, clip_norm: Optional[float]):
    """Rescale rows of ``g`` whose L2 norm exceeds ``clip_norm``."""
    g = np.asarray(g, dtype=float)
    if clip_norm is None:
        return g
    norm = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
    scale = np.minimum(1.0, clip_norm / np.maximum(norm, 1e-300))
    return g * scale


def grad_log_likelihood(lik: GaussianLikelihood, x, guards: Optional[LikelihoodGuards] = None):
    x = np.asarray(x, dtype=float)
    _check_dim(lik, x)
    g = (lik.y_array - x) / lik.variance
    return clip_by_norm(g, guards.clip_norm if guards is not None else None)
