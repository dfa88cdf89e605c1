import math

import numpy as np
import pytest

from oracles import gaussian_ess_fraction
from targeted_flow import gmm
from targeted_flow.baselines import GuidedField, run_direct_is, run_guided_ode, run_unconditional
from targeted_flow.flows import ACCELERATED, Schedule, ScheduleFn, TimeGrid
from targeted_flow.likelihood import GaussianLikelihood, LikelihoodGuards
from targeted_flow.problems import toy_problem
from targeted_flow.tftf import TftfConfig, run_tftf

PROB = toy_problem()
NO_GUIDE = Schedule(beta=ScheduleFn("constant", 0.0))


def test_unguided_is_ess_matches_closed_form():
    # with beta = 0 the proposal is the data flow itself, so weights are just the likelihood
    K = 4000
    out = run_direct_is(PROB.field, PROB.lik, NO_GUIDE, K, TimeGrid(400))
    frac = gaussian_ess_fraction(PROB.data.weights, PROB.data.means, PROB.data.variances, (0.0, 0.0), 0.25)
    assert out.ess / K == pytest.approx(frac, abs=0.05)


def test_flat_likelihood_near_full_ess():
    lik = GaussianLikelihood((0.0, 0.0), 1e8)
    K = 500
    out = run_direct_is(PROB.field, lik, NO_GUIDE, K, TimeGrid(1000))
    assert out.ess >= 0.99 * K


def test_tracked_density_first_order():
    errs = []
    for n in (200, 400):
        out = run_direct_is(PROB.field, PROB.lik, NO_GUIDE, 100, TimeGrid(n))
        errs.append(np.max(np.abs(out.tracked_log_p1 - gmm.mixture_log_density(PROB.data, out.samples))))
    assert errs[1] < 0.7 * errs[0]


def test_guided_field_divergence():
    f = GuidedField(PROB.field, PROB.lik, LikelihoodGuards(), Schedule())
    x = np.random.default_rng(0).normal(size=(5, 2))
    eps = 1e-5
    fd = sum((f(x + eps * e, 0.5)[:, i] - f(x - eps * e, 0.5)[:, i]) / (2 * eps)
             for i, e in enumerate(np.eye(2)))
    np.testing.assert_allclose(f.divergence(x, 0.5), fd, atol=1e-5)
    g = GuidedField(PROB.field, PROB.lik, LikelihoodGuards(), Schedule(), mode=ACCELERATED)
    np.testing.assert_array_equal(g(x, 0.0), PROB.field(x, 0.0))


def test_direct_is_needs_density():
    class Opaque:
        dim = 2

        def __call__(self, x, t):
            return -x

    with pytest.raises(ValueError):
        run_direct_is(Opaque(), PROB.lik, Schedule(), 4, TimeGrid(10))


def test_guided_without_guidance_is_prior():
    x = run_guided_ode(PROB.field, PROB.lik, NO_GUIDE, 10000, TimeGrid(200))
    upper = np.mean(x.sum(axis=1) > 0)
    assert abs(upper - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 10000) + 0.01


def test_guided_ode_bias_exceeds_tftf():
    # the uncorrected guided flow collapses onto the observation; TFTF keeps the 3:1 split
    truth = 0.25
    guided = run_guided_ode(PROB.field, PROB.lik, Schedule(), 2000, TimeGrid(1000))
    g_bias = abs(np.mean(guided.sum(axis=1) > 0) - truth)
    t_bias = []
    for seed in range(3):
        out = run_tftf(PROB.field, PROB.lik, TftfConfig(K=2000, seed=seed))
        t_bias.append(np.sum(out.norm_weights * (out.samples.sum(axis=1) > 0)) - truth)
    assert g_bias >= 2 * abs(np.mean(t_bias))


def test_single_particle_deterministic():
    a = run_guided_ode(PROB.field, PROB.lik, Schedule(), 1, TimeGrid(100), seed=4)
    b = run_guided_ode(PROB.field, PROB.lik, Schedule(), 1, TimeGrid(100), seed=4)
    assert a.tobytes() == b.tobytes()
    out = run_direct_is(PROB.field, PROB.lik, Schedule(), 1, TimeGrid(50), seed=4)
    assert out.norm_weights.tolist() == [1.0]


def test_unconditional_matches_data():
    n = 10000
    x = run_unconditional(PROB.field, n, TimeGrid(500), workers=2)
    upper = np.mean(x.sum(axis=1) > 0)
    assert abs(upper - 0.25) < 0.02
    sd = np.sqrt(np.diag(PROB.data.covariance()))
    assert np.all(np.abs(x.mean(axis=0) - PROB.data.mean()) < 4 * sd / math.sqrt(n) + 0.02)
    np.testing.assert_array_equal(x, run_unconditional(PROB.field, n, TimeGrid(500), workers=1))
