"""Reference samplers: direct importance sampling, uncorrected guided ODE, unconditional ODE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import streams
from .flows import ACCELERATED, EXACT, Schedule, TimeGrid, conditional_velocity, finite_difference_divergence, \
    ode_solve
from .gmm import LOG_2PI, mixture_log_density
from .likelihood import GaussianLikelihood, LikelihoodGuards, log_likelihood
from .parallel import RowPool
from .smc import ess, normalize


@dataclass
class IsOutput:
    samples: np.ndarray
    log_weights: np.ndarray
    norm_weights: np.ndarray
    ess: float
    tracked_log_p1: np.ndarray


class GuidedField:
    """``v_c`` as a velocity field, with a divergence for density tracking.

    Without guidance the field's own divergence is used; otherwise the
    divergence is taken by central differences, since clipping makes ``v_c``
    only piecewise smooth.  Accelerated guidance is singular at ``t = 0``, so
    that single step falls back to the unconditional field.
    """

    def __init__(self, v, lik: GaussianLikelihood, guards: LikelihoodGuards, sched: Schedule, mode=EXACT,
                 fd_step: float = 1e-5):
        self.v = v
        self.dim = v.dim
        self.lik = lik
        self.guards = guards
        self.sched = sched
        self.mode = mode
        self.fd_step = fd_step

    def _unguided(self, t):
        return self.sched.beta(t) == 0.0 or (self.mode == ACCELERATED and t == 0.0)

    def __call__(self, x, t):
        if self._unguided(t):
            return self.v(x, t)
        return conditional_velocity(self.v, self.lik, self.guards, self.sched, x, t, self.mode)

    def divergence(self, x, t):
        if self._unguided(t):
            return self.v.divergence(x, t)
        return finite_difference_divergence(lambda z: self(z, t), x, self.fd_step)


def _initial(seed, K, d):
    return streams.normal_block(seed, "baseline", 0, (K, d))


def _std_normal_logpdf(x):
    return -0.5 * x.shape[-1] * LOG_2PI - 0.5 * np.sum(x * x, axis=-1)


def run_direct_is(v, lik: GaussianLikelihood, sched: Schedule, K: int, grid: TimeGrid, mode=EXACT, seed: int = 0,
                  guards: Optional[LikelihoodGuards] = None, data=None, workers: int = 1) -> IsOutput:
    """Guided ODE from ``N(0, I)`` with exact path-density tracking, weighted by ``p_data * p / p_1``."""
    data = getattr(v, "data", None) if data is None else data
    if data is None:
        raise ValueError("direct importance sampling needs the analytic data density")
    guards = LikelihoodGuards.default(v.dim) if guards is None else guards
    field_ = GuidedField(v, lik, guards, sched, mode)
    x0 = _initial(seed, K, v.dim)

    def work(xc):
        return ode_solve(field_, xc, 0.0, 1.0, grid, track_density=True)

    with RowPool(workers) as pool:
        x1, dlogp = pool.map(work, x0)
    log_p1 = _std_normal_logpdf(x0) + dlogp
    log_w = mixture_log_density(data, x1) + log_likelihood(lik, x1) - log_p1
    w = normalize(log_w, "direct importance weights")
    return IsOutput(x1, log_w, w, ess(w), log_p1)


def run_guided_ode(v, lik: GaussianLikelihood, sched: Schedule, K: int, grid: TimeGrid, mode=EXACT, seed: int = 0,
                   guards: Optional[LikelihoodGuards] = None, workers: int = 1) -> np.ndarray:
    """Integrate ``v_c`` to ``t = 1`` without any correction; samples are equally weighted."""
    guards = LikelihoodGuards.default(v.dim) if guards is None else guards
    field_ = GuidedField(v, lik, guards, sched, mode)
    with RowPool(workers) as pool:
        return pool.map(lambda xc: ode_solve(field_, xc, 0.0, 1.0, grid)[0], _initial(seed, K, v.dim))


def run_unconditional(v, K: int, grid: TimeGrid, seed: int = 0, workers: int = 1) -> np.ndarray:
    with RowPool(workers) as pool:
        return pool.map(lambda xc: ode_solve(v, xc, 0.0, 1.0, grid)[0], _initial(seed, K, v.dim))
