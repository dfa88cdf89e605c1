"""Closed-form isotropic Gaussian-mixture machinery.

Everything here is vectorized over a leading batch axis: ``x`` may be a single
point of shape ``(d,)`` or a batch of shape ``(n, d)``; outputs follow the
same convention.

The time-``t`` marginal of ``t * X1 + (1 - t) * X0`` with ``X1 ~ data`` and
``X0 ~ N(0, I)`` is again an isotropic mixture with components
``(w_j, t * mu_j, t^2 sigma_j^2 + (1 - t)^2)``.  The optimal flow-matching
velocity ``E[X1 - X0 | X_t = x]`` is the responsibility-weighted average of the
per-component conditional expectations

    v_j(x) = mu_j + c_j * (x - t * mu_j),   c_j = (t sigma_j^2 - (1 - t)) / s_j,

which stays finite at ``t = 0`` (where it reduces to ``E[X1] - x``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, ...]
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"component variance must be > 0, got {self.variance}")
        if not 0 < self.weight <= 1:
            raise ValueError(f"component weight must lie in (0, 1], got {self.weight}")


class GaussianMixture:
    """Weighted isotropic Gaussian mixture in ``R^d``.

    Stored as arrays: ``weights (J,)``, ``means (J, d)``, ``variances (J,)``.
    """

    def __init__(self, weights, means, variances):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        variances = np.asarray(variances, dtype=float).reshape(-1)
        if not (len(weights) == len(means) == len(variances)) or len(weights) == 0:
            raise ValueError("weights, means and variances must have the same non-zero length")
        if np.any(~(variances > 0)):
            raise ValueError("component variances must be > 0")
        if np.any(~((weights > 0) & (weights <= 1))):
            raise ValueError("component weights must lie in (0, 1]")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"component weights must sum to 1, got {weights.sum()!r}")
        self.weights = weights
        self.means = means
        self.variances = variances
        for arr in (self.weights, self.means, self.variances):
            arr.setflags(write=False)

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        return cls(
            [c.weight for c in comps],
            [c.mean for c in comps],
            [c.variance for c in comps],
        )

    @classmethod
    def standard_normal(cls, dim: int) -> "GaussianMixture":
        return cls([1.0], np.zeros((1, dim)), [1.0])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(float(w), tuple(float(m) for m in mu), float(v))
            for w, mu, v in zip(self.weights, self.means, self.variances)
        ]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        d = self.dim
        cov = np.zeros((d, d))
        for w, m, v in zip(self.weights, self.means, self.variances):
            diff = m - mu
            cov += w * (v * np.eye(d) + np.outer(diff, diff))
        return cov

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[labels] + np.sqrt(self.variances[labels])[:, None] * noise

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    def __repr__(self):
        return (
            f"GaussianMixture(weights={self.weights.tolist()}, "
            f"means={self.means.tolist()}, variances={self.variances.tolist()})"
        )


@dataclass(frozen=True)
class TimeMarginal:
    t: float
    mixture: GaussianMixture


def _as_batch(x, dim: int):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return xb, single


def _unbatch(arr, single):
    return arr[0] if single else arr


def _check_time(t: float, *, open_left: bool = False):
    if not (0.0 <= t <= 1.0) or (open_left and t == 0.0):
        interval = "(0, 1]" if open_left else "[0, 1]"
        raise ValueError(f"time must lie in {interval}, got {t}")


def _responsibilities(weights, means, variances, xb):
    """Per-component log-joint terms and normalized responsibilities."""
    d = xb.shape[1]
    diff = xb[:, None, :] - means[None, :, :]  # (n, J, d)
    sq = np.sum(diff * diff, axis=-1)
    log_terms = (
        np.log(weights)[None, :]
        - 0.5 * d * (LOG_2PI + np.log(variances))[None, :]
        - 0.5 * sq / variances[None, :]
    )
    log_norm = logsumexp(log_terms, axis=1)
    resp = np.exp(log_terms - log_norm[:, None])
    return diff, log_norm, resp


def mixture_log_density(m: GaussianMixture, x):
    xb, single = _as_batch(x, m.dim)
    _, log_norm, _ = _responsibilities(m.weights, m.means, m.variances, xb)
    return _unbatch(log_norm, single)


def mixture_score(m: GaussianMixture, x):
    """Gradient of the mixture log-density: responsibility-weighted component scores."""
    xb, single = _as_batch(x, m.dim)
    diff, _, resp = _responsibilities(m.weights, m.means, m.variances, xb)
    comp_scores = -diff / m.variances[None, :, None]
    return _unbatch(np.einsum("nj,njd->nd", resp, comp_scores), single)


def mixture_log_hessian(m: GaussianMixture, x):
    """Hessian of the mixture log-density, shape ``(n, d, d)``."""
    xb, single = _as_batch(x, m.dim)
    diff, _, resp = _responsibilities(m.weights, m.means, m.variances, xb)
    a = -diff / m.variances[None, :, None]
    abar = np.einsum("nj,njd->nd", resp, a)
    inv_var = np.einsum("nj,j->n", resp, 1.0 / m.variances)
    outer = np.einsum("nj,njd,nje->nde", resp, a, a)
    hess = outer - abar[:, :, None] * abar[:, None, :]
    hess -= inv_var[:, None, None] * np.eye(m.dim)[None]
    return _unbatch(hess, single)


def mixture_log_laplacian(m: GaussianMixture, x):
    xb, single = _as_batch(x, m.dim)
    diff, _, resp = _responsibilities(m.weights, m.means, m.variances, xb)
    a = -diff / m.variances[None, :, None]
    abar = np.einsum("nj,njd->nd", resp, a)
    sq = np.sum(a * a, axis=-1)
    lap = np.sum(resp * (sq - m.dim / m.variances[None, :]), axis=1) - np.sum(abar * abar, axis=1)
    return _unbatch(lap, single)


def interpolated_marginal(data: GaussianMixture, t: float) -> TimeMarginal:
    _check_time(t)
    variances = t * t * data.variances + (1.0 - t) ** 2
    return TimeMarginal(t, GaussianMixture(data.weights, t * data.means, variances))


class _MarginalTerms:
    """Shared per-component quantities of the time-t marginal evaluated at a batch."""

    def __init__(self, data: GaussianMixture, xb: np.ndarray, t: float):
        self.t = t
        self.s = t * t * data.variances + (1.0 - t) ** 2  # (J,)
        self.c = (t * data.variances - (1.0 - t)) / self.s
        centers = t * data.means
        diff, self.log_norm, self.resp = _responsibilities(data.weights, centers, self.s, xb)
        self.diff = diff  # x - t mu_j, (n, J, d)
        self.v_comp = data.means[None, :, :] + self.c[None, :, None] * diff
        self.v = np.einsum("nj,njd->nd", self.resp, self.v_comp)
        self._data = data
        self._xb = xb

    def centered_scores(self):
        """(a_j - abar) for each component, where a_j = -(x - t mu_j) / s_j."""
        a = -self.diff / self.s[None, :, None]
        abar = np.einsum("nj,njd->nd", self.resp, a)
        return a - abar[:, None, :]

    def centered_scores_over_t(self):
        """(a_j - abar) / t written without the division, finite at t = 0."""
        t, s, r = self.t, self.s, self.resp
        sig2 = self._data.variances
        mu = self._data.means
        p = np.sum(r / s[None, :], axis=1)
        q = np.sum(r * (sig2 / s)[None, :], axis=1)
        rmean = np.einsum("nj,jd->nd", r / s[None, :], mu)
        coef = (sig2 / s)[None, :] * p[:, None] - q[:, None] / s[None, :]  # (n, J)
        return (
            t * coef[:, :, None] * self._xb[:, None, :]
            + (mu / s[:, None])[None, :, :]
            - rmean[:, None, :]
        )

    def jacobian(self):
        d = self._xb.shape[1]
        scalar = np.sum(self.resp * self.c[None, :], axis=1)
        outer = np.einsum("nj,njd,nje->nde", self.resp, self.v_comp, self.centered_scores())
        return outer + scalar[:, None, None] * np.eye(d)[None]

    def divergence(self):
        d = self._xb.shape[1]
        scalar = np.sum(self.resp * self.c[None, :], axis=1)
        cross = np.einsum("nj,njd,njd->n", self.resp, self.v_comp, self.centered_scores())
        return d * scalar + cross

    def lookahead_jacobian_over_t(self):
        """``(I + (1 - t) J) / t``, the Jacobian of the one-step projection divided by t."""
        d = self._xb.shape[1]
        sig2 = self._data.variances
        scalar = np.sum(self.resp * (sig2 / self.s)[None, :], axis=1)
        outer = np.einsum(
            "nj,njd,nje->nde", self.resp, self.v_comp, self.centered_scores_over_t()
        )
        return (1.0 - self.t) * outer + scalar[:, None, None] * np.eye(d)[None]


def analytic_velocity(data: GaussianMixture, x, t: float):
    """Exact ``E[X1 - X0 | X_t = x]`` for mixture data; continuous down to ``t = 0``."""
    _check_time(t)
    xb, single = _as_batch(x, data.dim)
    return _unbatch(_MarginalTerms(data, xb, t).v, single)


def velocity_jacobian(data: GaussianMixture, x, t: float):
    _check_time(t)
    xb, single = _as_batch(x, data.dim)
    return _unbatch(_MarginalTerms(data, xb, t).jacobian(), single)


def velocity_divergence(data: GaussianMixture, x, t: float, *, allow_zero: bool = False):
    """Closed-form divergence of the analytic velocity.

    Defined on ``(0, 1]``; pass ``allow_zero=True`` to get the ``t -> 0`` limit
    ``-d`` (needed by a left-endpoint integrator starting at ``t = 0``).
    """
    _check_time(t, open_left=not allow_zero)
    xb, single = _as_batch(x, data.dim)
    return _unbatch(_MarginalTerms(data, xb, t).divergence(), single)


def posterior_mixture(data: GaussianMixture, lik) -> GaussianMixture:
    """Exact posterior of mixture data under an isotropic Gaussian likelihood ``N(y; x, s I)``."""
    y = getattr(lik, "y", None)
    var_y = getattr(lik, "variance", None)
    if y is None or var_y is None or not getattr(lik, "conjugate", False):
        raise TypeError(f"unsupported likelihood for a closed-form posterior: {lik!r}")
    y = np.asarray(y, dtype=float)
    if y.shape != (data.dim,):
        raise ValueError(f"observation has shape {y.shape}, expected ({data.dim},)")
    if math.isinf(var_y):
        return GaussianMixture(data.weights, data.means, data.variances)
    post_var = 1.0 / (1.0 / data.variances + 1.0 / var_y)
    post_means = post_var[:, None] * (data.means / data.variances[:, None] + y[None, :] / var_y)
    ev_var = data.variances + var_y
    sq = np.sum((y[None, :] - data.means) ** 2, axis=1)
    log_w = np.log(data.weights) - 0.5 * data.dim * np.log(ev_var) - 0.5 * sq / ev_var
    w = np.exp(log_w - logsumexp(log_w))
    w = w / w.sum()
    return GaussianMixture(w, post_means, post_var)


def toy_data() -> GaussianMixture:
    """The 2-D two-component data distribution used throughout the experiments."""
    r = math.sqrt(2.0)
    return GaussianMixture([0.75, 0.25], [[-r, -r], [r, r]], [0.25, 0.25])
