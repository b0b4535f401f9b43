import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ndl import numkernel as nk
from ndl.errors import EmptyInputError, FactorizationError, ShapeError, SymmetryError


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_matches_triple_loop(rng):
    for _ in range(5):
        m, k, n = rng.integers(1, 8, size=3)
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        np.testing.assert_allclose(nk.matmul(a, b), loop_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_small_example():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0], [6.0]])
    np.testing.assert_array_equal(nk.matmul(a, b), [[17.0], [39.0]])


def test_matmul_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        nk.matmul(np.ones(3), np.ones((3, 1)))


def test_mean_and_covariance_hand_example():
    x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
    mean, cov = nk.mean_and_covariance(x)
    np.testing.assert_allclose(mean, [3.0, 6.0])
    # deviations (-2,-4), (0,0), (2,4) over n - 1 = 2
    np.testing.assert_allclose(cov, [[4.0, 8.0], [8.0, 16.0]])


def test_covariance_single_row_is_zero():
    mean, cov = nk.mean_and_covariance(np.array([[0.2, 0.4, 0.6]]))
    np.testing.assert_array_equal(mean, [0.2, 0.4, 0.6])
    np.testing.assert_array_equal(cov, np.zeros((3, 3)))


def test_covariance_empty_raises():
    with pytest.raises(EmptyInputError):
        nk.mean_and_covariance(np.zeros((0, 3)))


def test_covariance_agrees_with_numpy(rng):
    x = rng.standard_normal((40, 6))
    _, cov = nk.mean_and_covariance(x)
    np.testing.assert_allclose(cov, np.cov(x, rowvar=False), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 6)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_covariance_is_symmetric_psd(x):
    _, cov = nk.mean_and_covariance(x)
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-9 * max(1.0, np.abs(cov).max())


def test_cholesky_hand_example():
    low = nk.cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(low, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-14)


def test_cholesky_zero_matrix_with_ridge():
    low = nk.cholesky(np.zeros((3, 3)), ridge=1e-6)
    np.testing.assert_allclose(low, 1e-3 * np.eye(3), rtol=1e-12)


def test_cholesky_zero_matrix_without_ridge_fails():
    with pytest.raises(FactorizationError):
        nk.cholesky(np.zeros((3, 3)))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(SymmetryError):
        nk.cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


def test_cholesky_rejects_indefinite():
    with pytest.raises(FactorizationError):
        nk.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_default_ridge():
    assert nk.default_ridge(np.diag([2.0, 4.0])) == pytest.approx(3e-6)
    assert nk.default_ridge(np.zeros((4, 4))) == 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs_input(n, seed):
    rng = nk.make_rng(seed)
    a = rng.standard_normal((n, n + 2))
    a = a @ a.T
    ridge = nk.default_ridge(a)
    low = nk.cholesky(a, ridge)
    assert np.all(np.triu(low, 1) == 0)
    assert np.max(np.abs(low @ low.T - (a + ridge * np.eye(n)))) < 1e-8 * max(1.0, np.abs(a).max())


def test_sampling_moments(rng):
    cov = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, -0.3], [0.0, -0.3, 0.5]])
    mean = np.array([1.0, -2.0, 0.5])
    draws = nk.sample_gaussians(rng, mean, nk.cholesky(cov), 100_000)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.02)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), cov, atol=0.03)


def test_single_and_batched_sampling_share_a_law(rng):
    mean, low = np.zeros(2), np.array([[1.0, 0.0], [0.5, 1.0]])
    one = nk.sample_gaussian(nk.make_rng(5), mean, low)
    z = nk.make_rng(5).standard_normal(2)
    np.testing.assert_allclose(one, low @ z)
    batch = nk.sample_gaussians(nk.make_rng(5), mean, low, 1)
    np.testing.assert_allclose(batch[0], one)


def test_sampling_shape_errors(rng):
    with pytest.raises(ShapeError):
        nk.sample_gaussians(rng, np.zeros(3), np.eye(2), 4)


def test_rng_state_round_trip():
    rng = nk.make_rng(9)
    rng.random(17)
    clone = nk.rng_from_state(nk.rng_state(rng))
    np.testing.assert_array_equal(rng.standard_normal(50), clone.standard_normal(50))


def test_seeded_streams_are_reproducible():
    np.testing.assert_array_equal(nk.make_rng(3).random(10), nk.make_rng(3).random(10))
