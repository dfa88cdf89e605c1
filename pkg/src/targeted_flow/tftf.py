"""Training-free targeted flow (TFTF).

Generation runs in three phases:

1. the unconditional ODE from ``N(0, I)`` up to ``t_n1``;
2. SMC over ``[t_n1, t_n2]``: resample, propose with the guided stochastic
   flow, reweight by look-ahead likelihood times the kernel ratio ``h / q``;
3. optional unconditional SDE diversification over ``[t_n2, t_n2 + delta]``,
   then the unconditional ODE to ``t = 1`` and a final correction by
   ``p(y | x_1) / (p(y | x_hat_1(x_{t_n2})) + eps2)``.

The engine keeps a leading *node* axis so the nested (island) variant can
reuse it; a plain TFTF run is the single-node case.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import streams
from .flows import (
    EXACT, GRADIENT_MODES, Schedule, TimeGrid, _guidance, em_step, kernel_params_h, kernel_params_q,
    ode_solve, velocity_and_lookahead,
)
from .likelihood import GaussianLikelihood, LikelihoodGuards, floored_log, log_likelihood
from .parallel import RowPool
from .smc import MULTINOMIAL, SCHEMES, SYSTEMATIC, DegenerateWeightsError, ess, multinomial_indices, normalize, \
    systematic_indices


class ConfigError(ValueError):
    """Invalid sampler configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class TftfConfig:
    K: int = 2000
    grid: TimeGrid = field(default_factory=TimeGrid)
    t_n1: float = 0.4
    t_n2: float = 0.8
    delta: float = 0.0
    sched: Schedule = field(default_factory=Schedule)
    guards: Optional[LikelihoodGuards] = None  # None -> LikelihoodGuards.default(dim)
    epsilon1: float = 1e-6
    scheme: str = SYSTEMATIC
    mode: str = EXACT
    seed: int = 0

    def validate(self) -> "TftfConfig":
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError("K", f"particle count must be a positive integer, got {self.K}")
        if not 0.0 < self.t_n1 < self.t_n2 < 1.0:
            raise ConfigError("t_n1", f"need 0 < t_n1 < t_n2 < 1, got t_n1={self.t_n1}, t_n2={self.t_n2}")
        for key in ("t_n1", "t_n2"):
            try:
                self.grid.index(getattr(self, key))
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        if self.delta < 0 or self.t_n2 + self.delta > 1.0 + 1e-12:
            raise ConfigError("delta", f"need delta >= 0 and t_n2 + delta <= 1, got {self.delta}")
        try:
            self.grid.index(min(self.t_n2 + self.delta, 1.0))
        except ValueError as exc:
            raise ConfigError("delta", str(exc)) from None
        if not self.epsilon1 >= 0:
            raise ConfigError("epsilon1", f"must be >= 0, got {self.epsilon1}")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"expected one of {SCHEMES}, got {self.scheme!r}")
        if self.mode not in GRADIENT_MODES:
            raise ConfigError("mode", f"expected one of {GRADIENT_MODES}, got {self.mode!r}")
        try:
            streams.check_seed(self.seed)
        except ValueError as exc:
            raise ConfigError("seed", str(exc)) from None
        n1, n2 = self.grid.index(self.t_n1), self.grid.index(self.t_n2)
        for n in range(n1, n2):
            t = self.grid.time(n)
            a = self.sched.alpha(t)
            if not (math.isfinite(a) and a > 0):
                raise ConfigError("alpha", f"alpha(t) must be finite and > 0 on the resampling interval, got {a} at t={t}")
            b = self.sched.beta(t)
            if not (math.isfinite(b) and b >= 0):
                raise ConfigError("beta", f"beta(t) must be finite and >= 0 on the resampling interval, got {b} at t={t}")
        return self

    def resolved_guards(self, dim: int) -> LikelihoodGuards:
        return self.guards if self.guards is not None else LikelihoodGuards.default(dim)

    @property
    def n1(self) -> int:
        return self.grid.index(self.t_n1)

    @property
    def n2(self) -> int:
        return self.grid.index(self.t_n2)

    @property
    def n_div(self) -> int:
        return self.grid.index(min(self.t_n2 + self.delta, 1.0))

    def with_(self, **changes) -> "TftfConfig":
        return replace(self, **changes)


@dataclass
class TftfOutput:
    samples: np.ndarray
    log_weights: np.ndarray
    norm_weights: np.ndarray
    ess_trace: list
    ancestry: np.ndarray
    timing: dict

    @property
    def ess(self) -> float:
        return self.ess_trace[-1]


def intermediate_log_weight(step_kind, lookahead_prev, lookahead_curr, log_h, log_q, guards: LikelihoodGuards):
    """Log incremental SMC weight.

    Look-ahead arguments are log-likelihoods ``log p(y | x_hat_1)``; the
    ``epsilon2`` floor is applied here, in log space.
    """
    curr = floored_log(lookahead_curr, guards.epsilon2)
    if step_kind == "first":
        return curr
    if step_kind != "subsequent":
        raise ValueError(f"step_kind must be 'first' or 'subsequent', got {step_kind!r}")
    return curr + log_h - log_q - floored_log(lookahead_prev, guards.epsilon2)


def final_log_weight(log_lik_terminal, lookahead_at_tn2, guards: LikelihoodGuards):
    """``log p(y | x_1) - log(p(y | x_hat_1(x_{t_n2})) + epsilon2)``; no floor on the terminal term."""
    return np.asarray(log_lik_terminal) - floored_log(lookahead_at_tn2, guards.epsilon2)


def weighted_expectation(out, phi: Callable) -> float:
    """``sum_k w_k phi(x_k)`` with ``phi`` vectorized over rows of the sample array."""
    vals = np.asarray(phi(out.samples), dtype=float)
    if vals.ndim == 0:
        vals = np.full(len(out.norm_weights), float(vals))
    return float(np.sum(out.norm_weights * vals))


class _Population:
    """Particle arrays with a ``(node, particle)`` leading shape."""

    def __init__(self, x, vel, la_log, vc):
        self.x = x
        self.vel = vel
        self.la_log = la_log  # unfloored log look-ahead likelihood
        self.vc = vc
        self.lw = None  # normalized log-weights per node

    def take_nodes(self, idx):
        for name in ("x", "vel", "la_log", "vc", "lw"):
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, arr[idx].copy())

    def take_particles(self, idx):
        for name in ("x", "vel", "la_log", "vc"):
            arr = getattr(self, name)
            if arr is not None:
                ix = idx if arr.ndim == 2 else idx[:, :, None]
                setattr(self, name, np.take_along_axis(arr, ix, axis=1))


class _Hooks:
    def after_reweight(self, n: int, pop: _Population, log_incr: np.ndarray):
        pass

    def before_resample(self, n: int, pop: _Population):
        pass


class _Engine:
    def __init__(self, field_, lik: GaussianLikelihood, cfg: TftfConfig, M: int, pool: RowPool, node_ids=None):
        if lik.dim != field_.dim:
            raise ConfigError("likelihood.y", f"dimension {lik.dim} does not match data dimension {field_.dim}")
        self.field = field_
        self.lik = lik
        self.cfg = cfg
        self.M = M
        self.K = cfg.K
        self.d = field_.dim
        self.guards = cfg.resolved_guards(self.d)
        self.pool = pool
        self.node_ids = list(range(M)) if node_ids is None else list(node_ids)

    def _flat(self, a):
        return a.reshape((self.M * self.K,) + a.shape[2:])

    def _shaped(self, a):
        return None if a is None else a.reshape((self.M, self.K) + a.shape[1:])

    def evaluate(self, x, t, guided):
        field_, lik, guards, cfg = self.field, self.lik, self.guards, self.cfg
        beta_t = cfg.sched.beta(t)

        def work(xc):
            if guided and cfg.mode == EXACT and beta_t != 0.0:
                vel, la_jac = velocity_and_lookahead(field_, xc, t)
            else:
                vel, la_jac = field_(xc, t), None
            ll = log_likelihood(lik, xc + (1.0 - t) * vel)
            vc = vel + _guidance(vel, la_jac, lik, guards, beta_t, xc, t, cfg.mode) if guided else None
            return vel, ll, vc

        vel, ll, vc = self.pool.map(work, self._flat(x))
        return self._shaped(vel), self._shaped(ll), self._shaped(vc)

    def ode(self, x, t_start, t_end):
        grid = self.cfg.grid
        out = self.pool.map(lambda xc: ode_solve(self.field, xc, t_start, t_end, grid)[0], self._flat(x))
        return self._shaped(out)

    def normalize(self, log_w, what):
        bad = ~np.any(np.isfinite(log_w), axis=-1) | np.any(np.isnan(log_w) | (log_w == np.inf), axis=-1)
        if np.any(bad):
            nodes = [self.node_ids[m] for m in np.flatnonzero(bad)]
            label = f"{what}, node {nodes[0]}" if self.M > 1 else what
            if len(nodes) > 1:
                label += f" (+{len(nodes) - 1} more)"
            raise DegenerateWeightsError(f"{label}: weights are all zero or not finite")
        return np.log(normalize(log_w, what))

    def resample(self, n, pop: _Population):
        cfg, M, K = self.cfg, self.M, self.K
        w = np.exp(pop.lw)
        if cfg.scheme == MULTINOMIAL:
            u = streams.uniform_block(cfg.seed, "resample", n, (M, K))
            idx = np.stack([multinomial_indices(w[m], u[m]) for m in range(M)])
        else:
            u = streams.uniform_block(cfg.seed, "resample", n, (M,))
            idx = np.stack([systematic_indices(w[m], u[m], K) for m in range(M)])
        pop.take_particles(idx)
        pop.lw = np.full((M, K), -math.log(K))
        return idx

    def propagate(self, n, pop: _Population, guided_next: bool):
        cfg = self.cfg
        grid = cfg.grid
        t_prev, t = grid.time(n - 1), grid.time(n)
        h = kernel_params_h(self.field, cfg.sched, pop.x, t_prev, grid.dt, velocity=pop.vel)
        q = kernel_params_q(self.field, self.lik, self.guards, cfg.sched, pop.x, t_prev, grid.dt,
                            cfg.epsilon1, cfg.mode, guided_velocity=pop.vc)
        noise = streams.normal_block(cfg.seed, "noise", n, (self.M, self.K, self.d))
        x_new = em_step(q, noise)
        log_h = h.log_density(x_new)
        log_q = q.log_density(x_new)
        vel, ll, vc = self.evaluate(x_new, t, guided_next)
        log_incr = intermediate_log_weight("subsequent", pop.la_log, ll, log_h, log_q, self.guards)
        pop.x, pop.vel, pop.la_log, pop.vc = x_new, vel, ll, vc
        return log_incr

    def diversify(self, x):
        cfg = self.cfg
        grid = cfg.grid
        for n in range(cfg.n2, cfg.n_div):
            t = grid.time(n)
            vel = self._shaped(self.pool.map(lambda xc: self.field(xc, t), self._flat(x)))
            params = kernel_params_h(self.field, cfg.sched, x, t, grid.dt, velocity=vel)
            x = em_step(params, streams.normal_block(cfg.seed, "diversify", n, (self.M, self.K, self.d)))
        return x


def _simulate(field_, lik, cfg: TftfConfig, M: int = 1, workers: int = 1, hooks: Optional[_Hooks] = None,
              node_ids=None):
    cfg.validate()
    hooks = hooks or _Hooks()
    grid = cfg.grid
    n1, n2 = cfg.n1, cfg.n2
    timing = {}
    ess_trace = []
    ancestry = []
    with RowPool(workers) as pool:
        eng = _Engine(field_, lik, cfg, M, pool, node_ids)
        clock = time.perf_counter()
        x0 = streams.normal_block(cfg.seed, "init", 0, (M, cfg.K, eng.d))
        x = eng.ode(x0, 0.0, cfg.t_n1)
        timing["ode_to_t_n1"] = time.perf_counter() - clock

        clock = time.perf_counter()
        vel, ll, vc = eng.evaluate(x, cfg.t_n1, guided=True)
        pop = _Population(x, vel, ll, vc)
        log_w = intermediate_log_weight("first", None, ll, None, None, eng.guards)
        pop.lw = eng.normalize(log_w, f"initial weighting at t={cfg.t_n1:g}")
        hooks.after_reweight(n1, pop, log_w)
        ess_trace.append(ess(np.exp(pop.lw)))
        for n in range(n1 + 1, n2 + 1):
            hooks.before_resample(n, pop)
            ancestry.append(eng.resample(n, pop))
            log_w = eng.propagate(n, pop, guided_next=n < n2)
            pop.lw = eng.normalize(log_w, f"SMC step {n} (t={grid.time(n):g})")
            hooks.after_reweight(n, pop, log_w)
            ess_trace.append(ess(np.exp(pop.lw)))
        timing["smc"] = time.perf_counter() - clock

        clock = time.perf_counter()
        x = eng.diversify(pop.x) if cfg.n_div > n2 else pop.x
        timing["diversify"] = time.perf_counter() - clock
        clock = time.perf_counter()
        x1 = eng.ode(x, grid.time(cfg.n_div), 1.0)
        ratio = final_log_weight(log_likelihood(lik, x1), pop.la_log, eng.guards)
        timing["ode_to_1"] = time.perf_counter() - clock
    return {
        "samples": x1,
        "lw_tn2": pop.lw,
        "ratio": ratio,
        "ess_trace": ess_trace,
        "ancestry": np.asarray(ancestry, dtype=np.int64).reshape(len(ancestry), M, cfg.K),
        "timing": timing,
    }


def run_tftf(v, lik: GaussianLikelihood, config: TftfConfig, workers: int = 1) -> TftfOutput:
    """Run the sampler; deterministic given ``config.seed`` for any ``workers``."""
    res = _simulate(v, lik, config, M=1, workers=workers)
    final = res["lw_tn2"][0] + res["ratio"][0]
    norm = normalize(final, "final reweighting at t=1")
    return TftfOutput(
        samples=res["samples"][0],
        log_weights=final,
        norm_weights=norm,
        ess_trace=[float(e[0]) for e in res["ess_trace"]] + [ess(norm)],
        ancestry=res["ancestry"][:, 0, :],
        timing=res["timing"],
    )


__all__ = [
    "ConfigError", "DegenerateWeightsError", "TftfConfig", "TftfOutput", "final_log_weight",
    "intermediate_log_weight", "run_tftf", "weighted_expectation",
]
