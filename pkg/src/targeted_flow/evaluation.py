"""Comparison metrics against closed-form posteriors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import streams
from .gmm import LOG_2PI, GaussianMixture
from .smc import ess, systematic_indices

MAX_MATCHING = 4096


def _equal_weight_set(points, weights, n, rng):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        return points[systematic_indices(w, rng.random(), n)]
    if len(points) > n:
        return points[np.sort(rng.choice(len(points), n, replace=False))]
    if len(points) < n:
        raise ValueError(f"need at least {n} unweighted points, got {len(points)}")
    return points


def wasserstein2(a, b, a_weights=None, b_weights=None, n: Optional[int] = None, seed: int = 0) -> float:
    """Exact W2 between two equal-size empirical measures.

    Weighted sets are first resampled (systematic) to ``n`` equal-weight
    points; unweighted sets larger than ``n`` are subsampled.  ``n`` defaults
    to the smaller set size, capped at 4096.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("wasserstein2 needs non-empty point sets")
    if n is None:
        n = min(len(a), len(b), MAX_MATCHING)
    if not 1 <= n <= MAX_MATCHING:
        raise ValueError(f"matching size must lie in [1, {MAX_MATCHING}], got {n}")
    rng = streams.stream(seed, "eval", 0)
    pa = _equal_weight_set(a, a_weights, n, rng)
    pb = _equal_weight_set(b, b_weights, n, rng)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    cost = cdist(pa, pb, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(max(cost[rows, cols].sum() / n, 0.0))


def responsibilities(samples, mixture: GaussianMixture) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    diff = x[:, None, :] - mixture.means[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    d = mixture.dim
    logp = np.log(mixture.weights) - 0.5 * d * (LOG_2PI + np.log(mixture.variances)) - 0.5 * sq / mixture.variances
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def component_stats(samples, weights, posterior: GaussianMixture):
    """Soft-assigned mass and mean of each posterior component."""
    x = np.asarray(samples, dtype=float)
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    r = responsibilities(x, posterior) * w[:, None]
    mass = r.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = (r.T @ x) / mass[:, None]
    return mass / mass.sum(), means


@dataclass
class MetricReport:
    w2: float
    component_weights: list
    component_means: list
    moment_errors: dict = field(default_factory=dict)
    ess: float = float("nan")

    def to_dict(self):
        return asdict(self)


def metric_report(samples, weights, posterior: GaussianMixture, truth, n: Optional[int] = None,
                  seed: int = 0) -> MetricReport:
    x = np.asarray(samples, dtype=float)
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    mass, means = component_stats(x, w, posterior)
    mean_err = np.sum(w[:, None] * x, axis=0) - posterior.mean()
    second = np.sum(w[:, None] * x * x, axis=0)
    second_true = np.diag(posterior.covariance()) + posterior.mean() ** 2
    return MetricReport(
        w2=wasserstein2(x, truth, a_weights=w, n=n, seed=seed),
        component_weights=mass.tolist(),
        component_means=means.tolist(),
        moment_errors={
            "mean_abs_max": float(np.max(np.abs(mean_err))),
            "second_moment_abs_max": float(np.max(np.abs(second - second_true))),
        },
        ess=ess(w),
    )


def convergence_curve(runner: Callable, sizes: Sequence[int], replicates: int, phi: Callable, exact: float,
                      seed: int = 0):
    """``(size, rmse)`` of weighted ``phi`` estimates over seeded replicates.

    ``runner(size, seed)`` returns an object with ``samples`` and
    ``norm_weights``, or a float estimate directly.
    """
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    out = []
    for size in sizes:
        errs = []
        for r in range(replicates):
            res = runner(size, seed + r)
            if np.ndim(res) == 0 and not hasattr(res, "samples"):
                est = float(res)
            else:
                est = float(np.sum(res.norm_weights * np.asarray(phi(res.samples), dtype=float)))
            errs.append(est - exact)
        out.append((size, float(np.sqrt(np.mean(np.square(errs))))))
    return out


def loglog_slope(curve) -> float:
    sizes, rmse = np.array(curve, dtype=float).T
    return float(np.polyfit(np.log(sizes), np.log(rmse), 1)[0])
