import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import mp_logsumexp
from targeted_flow.smc import (MULTINOMIAL, SYSTEMATIC, DegenerateWeightsError, ParticleSet, ess, normalize,
                               resample, resample_indices, systematic_indices)

logw = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=40)


@given(logw)
def test_normalize_matches_extended_precision(lw):
    w = normalize(np.array(lw))
    lse = mp_logsumexp(lw)
    import mpmath
    ref = [float(mpmath.exp(mpmath.mpf(v) - lse)) for v in lw]
    np.testing.assert_allclose(w, ref, rtol=1e-12, atol=1e-300)
    assert abs(w.sum() - 1.0) < 1e-12


@given(logw, st.floats(-500, 500))
def test_normalize_shift_invariant(lw, c):
    lw = np.array(lw)
    np.testing.assert_allclose(normalize(lw + c), normalize(lw), rtol=1e-9, atol=1e-15)


def test_normalize_extreme_values():
    w = normalize(np.array([-1e308, 0.0, -np.inf]))
    np.testing.assert_array_equal(w, [0.0, 1.0, 0.0])


@pytest.mark.parametrize("bad", [[-np.inf, -np.inf], [0.0, np.nan], [np.inf, 0.0]])
def test_normalize_degenerate(bad):
    with pytest.raises(DegenerateWeightsError, match="my set"):
        normalize(np.array(bad), "my set")


def test_ess_values():
    assert ess(np.full(10, 0.1)) == pytest.approx(10.0)
    assert ess(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
    assert ess(np.array([0.5, 0.25, 0.25])) == pytest.approx(1 / 0.375)


@given(logw)
def test_ess_bounds(lw):
    e = ess(normalize(np.array(lw)))
    assert 1.0 - 1e-9 <= e <= len(lw) * (1 + 1e-9)


def test_systematic_counts_deterministic():
    w = np.array([0.5, 0.25, 0.125, 0.125])
    idx = systematic_indices(w, 0.3, 8)
    np.testing.assert_array_equal(np.bincount(idx, minlength=4), [4, 2, 1, 1])


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30).filter(lambda v: sum(v) > 1e-3),
       st.floats(0.0, 0.999999))
def test_systematic_count_bounds(raw, u):
    w = np.array(raw) / sum(raw)
    n = len(w)
    counts = np.bincount(systematic_indices(w, u), minlength=n)
    assert counts.sum() == n
    assert np.all(counts >= np.floor(n * w - 1e-9)) and np.all(counts <= np.ceil(n * w + 1e-9))
    assert np.all(counts[w == 0] == 0)


@pytest.mark.parametrize("scheme", [SYSTEMATIC, MULTINOMIAL])
def test_resampling_unbiased(scheme):
    w = np.array([0.6, 0.3, 0.1])
    rng = np.random.default_rng(0)
    counts = np.zeros(3)
    reps = 20000
    for _ in range(reps):
        counts += np.bincount(resample_indices(w, scheme, rng, 10), minlength=3)
    mean = counts / reps / 10
    np.testing.assert_allclose(mean, w, atol=5e-3)


def test_systematic_variance_below_multinomial():
    w = np.array([0.37, 0.21, 0.42])
    rng = np.random.default_rng(1)
    var = {}
    for scheme in (SYSTEMATIC, MULTINOMIAL):
        c = [np.bincount(resample_indices(w, scheme, rng, 50), minlength=3)[0] for _ in range(4000)]
        var[scheme] = np.var(c)
    assert var[SYSTEMATIC] < var[MULTINOMIAL]


def test_resample_particle_set_and_unknown_scheme():
    ps = ParticleSet(np.zeros((3, 2)), np.array([0.0, -np.inf, -np.inf]))
    np.testing.assert_array_equal(resample(ps, rng=np.random.default_rng(0)), [0, 0, 0])
    with pytest.raises(ValueError):
        resample_indices(np.ones(3) / 3, "stratified", np.random.default_rng(0))
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((3, 2)), np.zeros(2))
