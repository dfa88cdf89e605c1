import numpy as np
import pytest

from targeted_flow import streams
from targeted_flow.parallel import RowPool


def test_keyed_streams_reproducible_and_distinct():
    a = streams.normal_block(3, "noise", 7, (4, 2))
    np.testing.assert_array_equal(a, streams.normal_block(3, "noise", 7, (4, 2)))
    assert not np.array_equal(a, streams.normal_block(3, "noise", 8, (4, 2)))
    assert not np.array_equal(a, streams.normal_block(3, "resample", 7, (4, 2)))
    assert not np.array_equal(a, streams.normal_block(4, "noise", 7, (4, 2)))


def test_block_rows_are_prefix_stable():
    big = streams.normal_block(0, "init", 0, (5, 3, 2))
    small = streams.normal_block(0, "init", 0, (2, 3, 2))
    np.testing.assert_array_equal(big[:2], small)


@pytest.mark.parametrize("seed", [-1, 2**64, 1.5, True])
def test_seed_range(seed):
    with pytest.raises(ValueError):
        streams.check_seed(seed)


def test_max_seed_accepted():
    assert streams.uniform_block(streams.MAX_SEED, "eval", 0, ()).shape == ()


def test_row_pool_matches_serial():
    x = np.random.default_rng(0).normal(size=(101, 3))
    fn = lambda a: (np.sin(a) * 2, None, a.sum(axis=1))
    ref = fn(x)
    for workers in (1, 2, 7):
        with RowPool(workers) as pool:
            out = pool.map(fn, x)
        np.testing.assert_array_equal(out[0], ref[0])
        assert out[1] is None
        np.testing.assert_array_equal(out[2], ref[2])
    with pytest.raises(ValueError):
        RowPool(0)
