"""Nested (island) TFTF: M nodes of K particles with node-level weights.

Each node runs the TFTF inner loop.  A node's weight ``lambda`` accumulates
the mean unnormalized inner weight at every step; whole nodes are resampled
by ``lambda`` when the node-level ESS drops below ``M_tau`` (or at every step,
or never).  Final weights are ``lambda_m * wbar_mk * ratio_mk``, normalized
over all ``M * K`` samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import streams
from .smc import DegenerateWeightsError, ParticleSet, ess, normalize, systematic_indices
from .tftf import ConfigError, TftfConfig, _Hooks, _simulate

ADAPTIVE = "adaptive"
ALWAYS = "always"
NEVER = "never"
OUTER_MODES = (ADAPTIVE, ALWAYS, NEVER)


@dataclass
class NodeState:
    particles: ParticleSet
    log_lambda: float
    node_id: int

    def __post_init__(self):
        if not math.isfinite(self.log_lambda):
            raise ValueError(f"node {self.node_id}: log_lambda must be finite, got {self.log_lambda}")


@dataclass(frozen=True)
class NestedConfig:
    M: int = 50
    M_tau: Optional[float] = None  # None -> 0.8 * M
    inner: TftfConfig = field(default_factory=lambda: TftfConfig(K=4))
    outer: str = ADAPTIVE

    @property
    def threshold(self) -> float:
        return 0.8 * self.M if self.M_tau is None else float(self.M_tau)

    def validate(self) -> "NestedConfig":
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError("M", f"node count must be a positive integer, got {self.M}")
        if self.outer not in OUTER_MODES:
            raise ConfigError("outer", f"expected one of {OUTER_MODES}, got {self.outer!r}")
        if self.M > 1 and self.outer == ADAPTIVE and not 1.0 < self.threshold <= self.M:
            raise ConfigError("M_tau", f"need 1 < M_tau <= M = {self.M}, got {self.threshold}")
        self.inner.validate()
        return self


@dataclass
class NestedOutput:
    samples: np.ndarray  # (M * K, d), node-major
    log_weights: np.ndarray
    norm_weights: np.ndarray
    node_ids: list
    node_index: np.ndarray  # slot of each sample's node
    node_ess_trace: list  # (step, node ESS before the outer decision)
    outer_events: list
    log_lambda_history: np.ndarray  # (steps, M), after each reweighting
    inner_ess_trace: np.ndarray  # (steps, M)
    timing: dict

    @property
    def ess(self) -> float:
        return ess(self.norm_weights)


def update_node_weight(log_lambda_prev, unnorm_inner_log_weights):
    """``log(lambda_prev * mean(w))`` from unnormalized inner log-weights (last axis)."""
    lw = np.asarray(unnorm_inner_log_weights, dtype=float)
    if np.any(np.isnan(lw)) or not np.all(np.any(np.isfinite(lw), axis=-1)):
        raise DegenerateWeightsError("node weight update: all inner weights are zero")
    return log_lambda_prev + logsumexp(lw, axis=-1) - math.log(lw.shape[-1])


def node_ess(log_lambda) -> float:
    return ess(normalize(np.asarray(log_lambda, dtype=float), "node weights"))


def _outer_indices(log_lambda, threshold, u, mode=ADAPTIVE):
    """Node ancestor indices, or ``None`` when no outer resampling is due."""
    if mode == NEVER or len(log_lambda) == 1:
        return None
    w = normalize(log_lambda, "node weights")
    if mode == ADAPTIVE and not ess(w) < threshold:
        return None
    return systematic_indices(w, u)


def maybe_outer_resample(nodes: Sequence[NodeState], M_tau, rng: np.random.Generator) -> list:
    """Resample whole nodes by ``lambda`` when their ESS is below ``M_tau``; copies reset ``lambda`` to 1."""
    log_lambda = np.array([nd.log_lambda for nd in nodes])
    idx = _outer_indices(log_lambda, M_tau, rng.random())
    if idx is None:
        return list(nodes)
    out = []
    for slot, a in enumerate(idx):
        src = nodes[a]
        ps = ParticleSet(src.particles.states.copy(), src.particles.log_weights.copy(),
                         src.particles.stream_keys.copy())
        out.append(NodeState(ps, 0.0, nodes[slot].node_id))
    return out


class _NodeWeights(_Hooks):
    def __init__(self, cfg: NestedConfig):
        self.cfg = cfg
        self.n1 = cfg.inner.n1
        self.log_lambda = None
        self.history = []
        self.node_ess_trace = []
        self.events = []

    def after_reweight(self, n, pop, log_incr):
        prev = 0.0 if n == self.n1 else self.log_lambda
        self.log_lambda = update_node_weight(prev, log_incr)
        self.history.append(self.log_lambda.copy())

    def before_resample(self, n, pop):
        if self.cfg.M == 1:
            return
        e = node_ess(self.log_lambda)
        self.node_ess_trace.append((n - 1, e))
        u = streams.uniform_block(self.cfg.inner.seed, "outer", n, ())
        idx = _outer_indices(self.log_lambda, self.cfg.threshold, float(u), self.cfg.outer)
        if idx is None:
            return
        pop.take_nodes(idx)
        self.log_lambda = np.zeros_like(self.log_lambda)
        self.events.append({"step": n - 1, "time": self.cfg.inner.grid.time(n - 1), "node_ess": e,
                            "ancestors": idx.tolist()})


def combine_node_weights(log_lambda, lw_tn2, ratio, node_ids=None):
    """Global log-weights and normalized weights of ``lambda * wbar * ratio``.

    Computed as node share times within-node share, so a single node gives
    exactly the single-population result.
    """
    within = lw_tn2 + ratio
    bad = np.flatnonzero(~np.all(np.isfinite(within) | (within == -np.inf), axis=-1)
                         | ~np.any(np.isfinite(within), axis=-1))
    if len(bad):
        ids = list(range(len(within))) if node_ids is None else node_ids
        raise DegenerateWeightsError(f"final reweighting at t=1, node {ids[bad[0]]}: weights are all zero or not finite")
    node_log = log_lambda + logsumexp(within, axis=-1)
    node_share = normalize(node_log, "final node weights")
    within_norm = normalize(within, "final reweighting at t=1")
    # unnormalized log-weights are defined up to a constant; anchoring at node 0 keeps M = 1 equal to TFTF
    log_w = (log_lambda - log_lambda[0])[:, None] + within
    return log_w.ravel(), (node_share[:, None] * within_norm).ravel()


def run_nested(v, lik, config: NestedConfig, node_ids=None, workers: int = 1) -> NestedOutput:
    """Run Nested TFTF.  Node ``i`` in sorted ``node_ids`` draws from row ``i`` of every keyed random block."""
    config.validate()
    M, K = config.M, config.inner.K
    ids = list(range(M)) if node_ids is None else sorted(int(i) for i in node_ids)
    if len(ids) != M or len(set(ids)) != M:
        raise ConfigError("node_ids", f"need {M} distinct node ids, got {node_ids!r}")
    hooks = _NodeWeights(config)
    res = _simulate(v, lik, config.inner, M=M, workers=workers, hooks=hooks, node_ids=ids)
    log_w, norm_w = combine_node_weights(hooks.log_lambda, res["lw_tn2"], res["ratio"], ids)
    return NestedOutput(
        samples=res["samples"].reshape(M * K, -1),
        log_weights=log_w,
        norm_weights=norm_w,
        node_ids=ids,
        node_index=np.repeat(np.arange(M), K),
        node_ess_trace=hooks.node_ess_trace,
        outer_events=hooks.events,
        log_lambda_history=np.array(hooks.history),
        inner_ess_trace=np.array(res["ess_trace"]),
        timing=res["timing"],
    )
