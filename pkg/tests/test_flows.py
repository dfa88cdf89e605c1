import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.stats import multivariate_normal

from oracles import fd_gradient
from targeted_flow import flows, gmm
from targeted_flow.flows import (ACCELERATED, EXACT, MixtureVelocity, Schedule, ScheduleFn, TimeGrid)
from targeted_flow.likelihood import GaussianLikelihood, LikelihoodGuards, log_likelihood

TOY = gmm.toy_data()
V = MixtureVelocity(TOY)
LIK = GaussianLikelihood((0.0, 0.0), 0.25)
NOCLIP = LikelihoodGuards(clip_norm=None)
pt = st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2)


def test_schedule_functions():
    a = ScheduleFn("c_over_t", 2.0)
    assert a(0.5) == 4.0 and a(0.0) == math.inf
    assert ScheduleFn("c_over_t", 0.0)(0.0) == 0.0
    assert ScheduleFn("constant", 3.0)(0.1) == 3.0
    with pytest.raises(ValueError):
        ScheduleFn("linear", 1.0)
    with pytest.raises(ValueError):
        ScheduleFn("constant", -1.0)


def test_time_grid():
    g = TimeGrid(1000)
    assert g.index(0.4) == 400 and g.time(800) == 0.8 and g.dt == 1e-3
    with pytest.raises(ValueError):
        g.index(0.4005)
    with pytest.raises(ValueError):
        TimeGrid(0)


def test_projection_standard_normal():
    m = MixtureVelocity(gmm.GaussianMixture.standard_normal(2))
    x, t = np.array([0.6, -1.0]), 0.3
    expected = x + (1 - t) * (2 * t - 1) / (t * t + (1 - t) ** 2) * x
    np.testing.assert_allclose(flows.one_step_projection(m, x, t), expected, atol=1e-14)
    np.testing.assert_allclose(flows.one_step_projection(m, x, 1.0), x)


def test_beta_zero_gives_unconditional():
    sched = Schedule(beta=ScheduleFn("constant", 0.0))
    x = np.array([0.4, 0.2])
    np.testing.assert_array_equal(flows.conditional_velocity(V, LIK, NOCLIP, sched, x, 0.5), V(x, 0.5))


@given(pt, st.floats(0.02, 0.98), st.floats(0.1, 3.0))
def test_exact_guidance_matches_finite_differences(x, t, beta):
    x = np.array(x)
    sched = Schedule(beta=ScheduleFn("constant", beta))

    def lookahead(z):
        return log_likelihood(LIK, flows.one_step_projection(V, z, t))

    fd = fd_gradient(lookahead, x, h=1e-6)
    got = flows.conditional_velocity(V, LIK, NOCLIP, sched, x, t, EXACT) - V(x, t)
    np.testing.assert_allclose(got, (1 - t) / t * beta * fd, rtol=1e-5, atol=1e-6)


def test_accelerated_guidance_formula():
    x, t = np.array([0.3, -0.4]), 0.5
    xhat = flows.one_step_projection(V, x, t)
    got = flows.conditional_velocity(V, LIK, NOCLIP, Schedule(), x, t, ACCELERATED) - V(x, t)
    np.testing.assert_allclose(got, (1 - t) / t * (LIK.y_array - xhat) / LIK.variance, atol=1e-13)


def test_guidance_at_zero():
    x = np.array([0.3, -0.4])
    with pytest.raises(ValueError):
        flows.conditional_velocity(V, LIK, NOCLIP, Schedule(), x, 0.0, ACCELERATED)
    at0 = flows.conditional_velocity(V, LIK, NOCLIP, Schedule(), x, 0.0, EXACT)
    near = flows.conditional_velocity(V, LIK, NOCLIP, Schedule(), x, 1e-8, EXACT)
    assert np.all(np.isfinite(at0))
    np.testing.assert_allclose(at0, near, atol=1e-5)


def test_guidance_clipped():
    guards = LikelihoodGuards(clip_norm=0.5)
    x, t = np.array([2.5, 2.0]), 0.5
    g = flows.conditional_velocity(V, LIK, guards, Schedule(), x, t, EXACT) - V(x, t)
    assert np.linalg.norm(g) == pytest.approx((1 - t) / t * 0.5, rel=1e-12)


def test_guidance_unknown_mode():
    with pytest.raises(ValueError):
        flows.conditional_velocity(V, LIK, NOCLIP, Schedule(), np.zeros(2), 0.5, "fancy")


@given(pt, st.floats(0.05, 0.95), st.floats(0.0, 5.0))
def test_sde_drift_score_identity(x, t, c):
    # the correction alpha(-x + t v) must equal alpha (1 - t) grad log p_t for the marginals to be preserved
    x = np.array(x)
    sched = Schedule(alpha=ScheduleFn("c_over_t", c))
    score = gmm.mixture_score(gmm.interpolated_marginal(TOY, t).mixture, x)
    extra = flows.sde_drift(V, sched, x, t) - V(x, t)
    np.testing.assert_allclose(extra, sched.alpha(t) * (1 - t) * score, rtol=1e-8, atol=1e-8)
    assert flows.sde_diffusion(sched, t) == pytest.approx(math.sqrt(2 * (1 - t) * c / t))


def test_alpha_zero_drift_is_velocity():
    sched = Schedule(alpha=ScheduleFn("c_over_t", 0.0))
    x = np.array([1.0, -0.3])
    np.testing.assert_array_equal(flows.sde_drift(V, sched, x, 0.5), V(x, 0.5))
    assert flows.sde_diffusion(sched, 0.5) == 0.0


def test_kernel_params():
    sched = Schedule()
    x, t, dt = np.array([0.2, 0.1]), 0.5, 1e-3
    h = flows.kernel_params_h(V, sched, x, t, dt)
    np.testing.assert_allclose(h.mean, x + flows.sde_drift(V, sched, x, t) * dt)
    assert h.variance == pytest.approx(2 * 0.5 * 2.0 * dt)
    q = flows.kernel_params_q(V, LIK, NOCLIP, sched, x, t, dt, 1e-6)
    assert q.variance == pytest.approx(h.variance + 1e-6)
    vc = flows.conditional_velocity(V, LIK, NOCLIP, sched, x, t)
    np.testing.assert_allclose(q.mean, x + flows.drift_from_velocity(vc, x, t, 2.0) * dt)
    z = np.array([[0.21, 0.09], [0.0, 0.0]])
    ref = multivariate_normal(h.mean, h.variance * np.eye(2)).logpdf(z)
    np.testing.assert_allclose(h.log_density(z), ref, rtol=1e-12)
    with pytest.raises(ValueError):
        flows.kernel_params_h(V, sched, x, 0.0, dt)


def test_em_step():
    p = flows.KernelParams(np.zeros((3, 2)), 0.04)
    np.testing.assert_allclose(flows.em_step(p, np.ones((3, 2))), 0.2)
    with pytest.raises(ValueError):
        flows.em_step(p, np.ones((2, 2)))
    with pytest.raises(RuntimeError):
        flows.em_step(flows.KernelParams(np.zeros(2), -1.0), np.ones(2))


def _reference_ode(x0, t0, t1):
    sol = solve_ivp(lambda t, z: V(z, t), (t0, t1), x0, rtol=1e-11, atol=1e-12)
    return sol.y[:, -1]


def test_ode_first_order_convergence():
    x0 = np.array([0.4, -0.8])
    ref = _reference_ode(x0, 0.0, 1.0)
    errs = [np.linalg.norm(flows.ode_solve(V, x0, 0.0, 1.0, TimeGrid(n))[0] - ref) for n in (200, 400, 800)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.6 < r < 2.4 for r in ratios), (errs, ratios)


def test_ode_subinterval_and_errors():
    x0 = np.array([[0.4, -0.8], [1.0, 1.0]])
    g = TimeGrid(1000)
    mid, _ = flows.ode_solve(V, x0, 0.0, 0.4, g)
    full, _ = flows.ode_solve(V, x0, 0.0, 1.0, g)
    np.testing.assert_array_equal(flows.ode_solve(V, mid, 0.4, 1.0, g)[0], full)
    with pytest.raises(ValueError):
        flows.ode_solve(V, x0, 0.6, 0.4, g)


def test_tracked_density_matches_data_density():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((200, 2))
    errs = []
    for n in (500, 1000):
        x1, dlogp = flows.ode_solve(V, x0, 0.0, 1.0, TimeGrid(n), track_density=True)
        logp0 = -np.log(2 * np.pi) - 0.5 * np.sum(x0 ** 2, axis=1)
        errs.append(np.max(np.abs(logp0 + dlogp - gmm.mixture_log_density(TOY, x1))))
    assert errs[1] < 0.05
    assert errs[1] < 0.7 * errs[0]


def test_finite_difference_divergence():
    x = np.random.default_rng(1).normal(size=(10, 2))
    fd = flows.finite_difference_divergence(lambda z: V(z, 0.6), x)
    np.testing.assert_allclose(fd, V.divergence(x, 0.6), atol=1e-6)


def test_sde_preserves_marginal_moments():
    rng = np.random.default_rng(2)
    n = 20000
    m = gmm.interpolated_marginal(TOY, 0.4).mixture
    x0 = m.sample(n, rng)
    g = TimeGrid(500)
    noise = lambda i: np.random.default_rng(1000 + i).standard_normal((n, 2))
    x1 = flows.sde_solve(V, Schedule(), x0, 0.4, 1.0, g, noise)
    upper = np.mean(x1.sum(axis=1) > 0)
    assert abs(upper - 0.25) < 4 * math.sqrt(0.25 * 0.75 / n) + 0.01
    sd = np.sqrt(np.diag(TOY.covariance()))
    assert np.all(np.abs(x1.mean(axis=0) - TOY.mean()) < 4 * sd / math.sqrt(n) + 0.02)
