"""Analytic test problems: a data mixture, a Gaussian likelihood and the exact posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm
from .flows import MixtureVelocity
from .likelihood import GaussianLikelihood


@dataclass(frozen=True)
class Problem:
    data: gmm.GaussianMixture
    lik: GaussianLikelihood

    @property
    def field(self) -> MixtureVelocity:
        return MixtureVelocity(self.data)

    @property
    def posterior(self) -> gmm.GaussianMixture:
        return gmm.posterior_mixture(self.data, self.lik)

    @property
    def dim(self) -> int:
        return self.data.dim


def toy_problem(y=(0.0, 0.0), variance: float = 0.25) -> Problem:
    """The two-mode planar mixture observed through ``N(y; x, variance I)``."""
    return Problem(gmm.toy_data(), GaussianLikelihood(tuple(y), variance))


def synthetic_problem(dim: int = 16, n_components: int = 4, seed: int = 0, spread: float = 1.0,
                      component_variance: float = 0.25, lik_variance: float = 0.25) -> Problem:
    """A random isotropic mixture in ``dim`` dimensions with an observation near its second component."""
    if n_components < 2:
        raise ValueError("synthetic problem needs at least two components")
    rng = np.random.default_rng(seed)
    means = spread * rng.standard_normal((n_components, dim))
    weights = np.arange(n_components, 0, -1, dtype=float)
    weights /= weights.sum()
    data = gmm.GaussianMixture(weights, means, np.full(n_components, component_variance))
    y = means[1] + np.sqrt(component_variance) * rng.standard_normal(dim)
    return Problem(data, GaussianLikelihood(tuple(y), lik_variance))
