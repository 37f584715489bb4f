import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2lab import numeric as nm
from m2lab.errors import ConfigurationError, DimensionError
from m2lab.monarch import (monarch_apply, monarch_dense, monarch_from_blocks, monarch_init,
                           shuffle_permutation)


def identity_blocks(b):
    return np.stack([np.eye(b)] * b)


def test_identity_blocks_give_identity():
    M = monarch_from_blocks(identity_blocks(4), identity_blocks(4))
    x = np.arange(16.0)
    assert np.array_equal(monarch_apply(M, x).values, x)
    assert np.array_equal(monarch_dense(M).values, np.eye(16))


def test_b2_hand_instance():
    left = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]])
    M = monarch_from_blocks(left, identity_blocks(2))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    out = monarch_apply(M, x).values
    assert np.allclose(out, monarch_dense(M).values @ x, atol=1e-15)
    # grid [[1,2],[3,4]] -> transpose [[1,3],[2,4]] -> swap first row -> [[3,1],[2,4]] -> back
    assert out.tolist() == [3.0, 2.0, 1.0, 4.0]


def test_zero_input_gives_zero():
    M = monarch_init(4, rng=0)
    assert not monarch_apply(M, np.zeros(16)).values.any()


def test_shuffle_is_the_grid_transpose():
    P = shuffle_permutation(4)
    x = np.arange(16.0)
    assert np.array_equal(P @ x, x.reshape(4, 4).T.reshape(-1))
    assert np.array_equal(P @ P, np.eye(16))


@pytest.mark.parametrize("b", [2, 4, 8])
def test_apply_matches_dense(b):
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        M = monarch_init(b, scale=1.0, rng=r)
        x = r.normal(size=b * b)
        worst = max(worst, np.abs(monarch_apply(M, x).values - monarch_dense(M).values @ x).max())
    assert worst < 1e-10


def test_apply_on_row_stack(rng):
    M = monarch_init(4, rng=rng)
    X = rng.normal(size=(5, 16))
    assert np.allclose(monarch_apply(M, X).values, X @ monarch_dense(M).values.T, atol=1e-12)


def test_scaling_right_blocks_scales_dense(rng):
    M = monarch_init(4, rng=rng)
    scaled = monarch_from_blocks(M.left.values, 3.0 * M.right.values)
    assert np.allclose(monarch_dense(scaled).values, 3.0 * monarch_dense(M).values, atol=1e-12)


def test_same_seed_same_blocks():
    a, b = monarch_init(8, rng=42), monarch_init(8, rng=42)
    assert np.array_equal(a.left.values, b.left.values)
    assert np.array_equal(a.right.values, b.right.values)


def test_zero_scale_is_zero_matrix():
    assert not monarch_dense(monarch_init(4, scale=0.0, rng=1)).values.any()


def test_default_scale_keeps_operator_norm_bounded():
    norms = [np.linalg.norm(monarch_dense(monarch_init(4, scale=1 / 4, rng=s)).values, 2)
             for s in range(100)]
    assert max(norms) < 4


@pytest.mark.parametrize("b", [3, 6, 0])
def test_invalid_block_count(b):
    with pytest.raises(ConfigurationError):
        monarch_init(b)


def test_length_mismatch():
    with pytest.raises(DimensionError):
        monarch_apply(monarch_init(2, rng=0), np.ones(5))


@pytest.mark.parametrize("b", [2, 4])
def test_gradients_pass_grad_check(b):
    r = np.random.default_rng(b)
    M = monarch_init(b, scale=1.0, rng=r)
    x = nm.DiffArray(r.normal(size=b * b), trainable=True)
    w = r.normal(size=b * b)
    assert nm.grad_check(lambda: nm.total(monarch_apply(M, x) * w), [M.left, M.right, x]) < 1e-5


@settings(max_examples=20, deadline=None)
@given(b=st.sampled_from([2, 4, 8, 16]), rows=st.integers(1, 4))
def test_multiplication_count(b, rows):
    M = monarch_init(b, rng=0)
    nm.reset_multiplication_count()
    monarch_apply(M, np.ones(b * b))
    assert nm.multiplication_count() == 2 * b ** 3
    nm.reset_multiplication_count()
    monarch_apply(M, np.ones((rows, b * b)))
    assert nm.multiplication_count() == rows * 2 * b ** 3
