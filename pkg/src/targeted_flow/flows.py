"""Velocity fields, guided and stochastic flows, Euler / Euler-Maruyama kernels.

Conventions: states are arrays of shape ``(n, d)`` (a single ``(d,)`` point is
accepted where noted), times are Python floats, and every integrator uses the
explicit left-endpoint rule on a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from . import gmm
from .likelihood import GaussianLikelihood, LikelihoodGuards, clip_by_norm

EXACT = "exact"
ACCELERATED = "accelerated"
GRADIENT_MODES = (EXACT, ACCELERATED)


class VelocityField(Protocol):
    dim: int

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def divergence(self, x: np.ndarray, t: float) -> np.ndarray: ...


class MixtureVelocity:
    """The exact flow-matching velocity of a Gaussian-mixture data distribution."""

    def __init__(self, data: gmm.GaussianMixture):
        self.data = data
        self.dim = data.dim

    def __call__(self, x, t):
        return gmm.analytic_velocity(self.data, x, t)

    def jacobian(self, x, t):
        return gmm.velocity_jacobian(self.data, x, t)

    def divergence(self, x, t):
        return gmm.velocity_divergence(self.data, x, t, allow_zero=True)

    def velocity_and_lookahead(self, x, t):
        """Velocity plus ``(I + (1 - t) J) / t``, both from one pass over the components."""
        xb, single = gmm._as_batch(x, self.dim)
        gmm._check_time(t)
        terms = gmm._MarginalTerms(self.data, xb, t)
        return gmm._unbatch(terms.v, single), gmm._unbatch(terms.lookahead_jacobian_over_t(), single)

    def __repr__(self):
        return f"MixtureVelocity({self.data!r})"


def velocity_and_lookahead(field, x, t):
    """Velocity and the projection Jacobian divided by ``t``.

    Fields that know a closed form finite at ``t = 0`` provide it; otherwise
    the generic ``(I + (1 - t) J) / t`` is used, which requires ``t > 0``.
    """
    if hasattr(field, "velocity_and_lookahead"):
        return field.velocity_and_lookahead(x, t)
    if t == 0.0:
        raise ValueError("look-ahead Jacobian / t is undefined at t = 0 for this field")
    vel = field(x, t)
    jac = field.jacobian(x, t)
    eye = np.eye(jac.shape[-1])
    return vel, (eye + (1.0 - t) * jac) / t


@dataclass(frozen=True)
class ScheduleFn:
    """A scalar schedule ``t -> scale / t`` (``c_over_t``) or ``t -> scale`` (``constant``)."""

    family: str = "constant"
    scale: float = 1.0

    FAMILIES = ("c_over_t", "constant")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}; expected one of {self.FAMILIES}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise ValueError(f"schedule scale must be finite and >= 0, got {self.scale}")

    def __call__(self, t: float) -> float:
        if self.family == "constant":
            return float(self.scale)
        if self.scale == 0.0:
            return 0.0
        return math.inf if t == 0.0 else self.scale / t

    def to_dict(self):
        return {"family": self.family, "scale": self.scale}


@dataclass(frozen=True)
class Schedule:
    alpha: ScheduleFn = ScheduleFn("c_over_t", 1.0)
    beta: ScheduleFn = ScheduleFn("constant", 1.0)


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int = 1000

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def time(self, index: int) -> float:
        return index / self.n_steps

    def index(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid node."""
        k = round(t * self.n_steps)
        if not 0 <= k <= self.n_steps or abs(k - t * self.n_steps) > 1e-9 * max(1, self.n_steps):
            raise ValueError(f"time {t} is not aligned with a grid of {self.n_steps} steps")
        return int(k)


@dataclass(frozen=True)
class KernelParams:
    mean: np.ndarray
    variance: float

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        diff = x - self.mean
        return -0.5 * d * math.log(2.0 * math.pi * self.variance) - 0.5 * np.sum(diff * diff, axis=-1) / self.variance


def one_step_projection(v, x, t, velocity=None):
    """Single Euler extrapolation ``x + (1 - t) v(x, t)`` to the terminal time."""
    vel = v(x, t) if velocity is None else velocity
    return np.asarray(x, dtype=float) + (1.0 - t) * vel


def _guidance(vel, lookahead_over_t, lik: GaussianLikelihood, guards: LikelihoodGuards, beta_t, x, t, mode):
    x = np.asarray(x, dtype=float)
    if beta_t == 0.0 or t == 1.0:
        return np.zeros_like(x)
    xhat = x + (1.0 - t) * vel
    inner = (lik.y_array - xhat) / lik.variance
    clip = guards.clip_norm if guards is not None else None
    if mode == EXACT:
        # guidance = ((1-t)/t) * beta * clip(A^T inner) with A = t * lookahead_over_t
        g_over_t = np.einsum("...ji,...j->...i", lookahead_over_t, inner)
        g = t * g_over_t
        if clip is not None:
            norm = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
            g_over_t = g_over_t * np.minimum(1.0, clip / np.maximum(norm, 1e-300))
        return (1.0 - t) * beta_t * g_over_t
    if mode == ACCELERATED:
        if t == 0.0:
            raise ValueError("accelerated guidance is singular at t = 0")
        return ((1.0 - t) / t) * beta_t * clip_by_norm(inner, clip)
    raise ValueError(f"unknown gradient mode {mode!r}; expected one of {GRADIENT_MODES}")


def conditional_velocity(v, lik, guards, sched: Schedule, x, t, mode=EXACT):
    """Unconditional velocity plus the look-ahead likelihood guidance term.

    ``exact`` differentiates through the one-step projection (using the field
    Jacobian); ``accelerated`` uses the likelihood gradient at the projected
    point only.  The exact form has a finite limit at ``t = 0``; the
    accelerated form does not and rejects it.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    beta_t = sched.beta(t)
    if mode == EXACT and beta_t != 0.0 and t != 1.0:
        vel, la = velocity_and_lookahead(v, x, t)
    else:
        if mode == ACCELERATED and t == 0.0 and beta_t != 0.0:
            raise ValueError("accelerated guidance is singular at t = 0")
        vel, la = v(x, t), None
    return vel + _guidance(vel, la, lik, guards, beta_t, x, t, mode)


def drift_from_velocity(vel, x, t, alpha_t):
    return alpha_t * (-np.asarray(x, dtype=float) + t * vel) + vel


def sde_drift(v, sched: Schedule, x, t, velocity=None):
    vel = v(x, t) if velocity is None else velocity
    return drift_from_velocity(vel, x, t, sched.alpha(t))


def sde_diffusion(sched: Schedule, t: float) -> float:
    return math.sqrt(2.0 * (1.0 - t) * sched.alpha(t))


def _kernel_variance(sched, t_prev, dt):
    var = 2.0 * (1.0 - t_prev) * sched.alpha(t_prev) * dt
    if not math.isfinite(var):
        raise ValueError(f"kernel variance is not finite at t = {t_prev}")
    return var


def kernel_params_h(v, sched: Schedule, x_prev, t_prev, dt, velocity=None) -> KernelParams:
    """One Euler-Maruyama step of the unconditional stochastic flow."""
    mean = np.asarray(x_prev, dtype=float) + sde_drift(v, sched, x_prev, t_prev, velocity) * dt
    return KernelParams(mean, _kernel_variance(sched, t_prev, dt))


def kernel_params_q(v, lik, guards, sched: Schedule, x_prev, t_prev, dt, epsilon1, mode=EXACT,
                    guided_velocity=None) -> KernelParams:
    """Proposal step: the stochastic flow driven by the guided field, variance floored by ``epsilon1``."""
    if guided_velocity is None:
        guided_velocity = conditional_velocity(v, lik, guards, sched, x_prev, t_prev, mode)
    mean = np.asarray(x_prev, dtype=float) + drift_from_velocity(
        guided_velocity, x_prev, t_prev, sched.alpha(t_prev)) * dt
    return KernelParams(mean, _kernel_variance(sched, t_prev, dt) + epsilon1)


def em_step(params: KernelParams, noise) -> np.ndarray:
    if params.variance < 0:
        raise RuntimeError(f"kernel variance is negative ({params.variance})")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != np.shape(params.mean):
        raise ValueError(f"noise shape {noise.shape} does not match state shape {np.shape(params.mean)}")
    return params.mean + math.sqrt(params.variance) * noise


def _interval(grid: TimeGrid, t_start: float, t_end: float):
    i0, i1 = grid.index(t_start), grid.index(t_end)
    if i1 < i0:
        raise ValueError(f"integration interval [{t_start}, {t_end}] runs backwards")
    return i0, i1


def ode_solve(v, x0, t_start, t_end, grid: TimeGrid, track_density=False):
    """Forward-Euler solve of ``dx = v dt``.

    With ``track_density`` the same rule accumulates ``-sum div v * dt``, the
    log-density change along each path, returned as the second element
    (``None`` otherwise).
    """
    i0, i1 = _interval(grid, t_start, t_end)
    x = np.array(x0, dtype=float)
    dt = grid.dt
    dlogp = np.zeros(x.shape[:-1]) if track_density else None
    for i in range(i0, i1):
        t = grid.time(i)
        if track_density:
            dlogp = dlogp - v.divergence(x, t) * dt
        x = x + v(x, t) * dt
    return x, dlogp


def sde_solve(v, sched: Schedule, x0, t_start, t_end, grid: TimeGrid, noise: Callable[[int], np.ndarray]):
    """Euler-Maruyama solve of the unconditional stochastic flow.

    ``noise(i)`` supplies the standard-normal increment for the step leaving
    grid node ``i``; keeping it a function of the step index makes paths
    reproducible regardless of how particles are batched.
    """
    i0, i1 = _interval(grid, t_start, t_end)
    x = np.array(x0, dtype=float)
    dt = grid.dt
    for i in range(i0, i1):
        t = grid.time(i)
        params = kernel_params_h(v, sched, x, t, dt)
        x = em_step(params, noise(i))
    return x


def finite_difference_divergence(fn, x, h=1e-5):
    """Central-difference divergence of a vector field ``fn(x)`` over a batch."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    eye = np.eye(d) * h
    plus = (x[None, :, :] + eye[:, None, :]).reshape(d * n, d)
    minus = (x[None, :, :] - eye[:, None, :]).reshape(d * n, d)
    fp = fn(plus).reshape(d, n, d)
    fm = fn(minus).reshape(d, n, d)
    idx = np.arange(d)
    return np.sum((fp[idx, :, idx] - fm[idx, :, idx]), axis=0) / (2.0 * h)

