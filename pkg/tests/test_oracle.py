import numpy as np
import pytest

from ewc_laplace.net import Architecture, TaskDataset, neg_log_likelihood
from ewc_laplace.oracle import (NotAtOptimumError, dense_laplace, exact_sequential_posterior,
                                fd_gradient, fd_hessian, is_one_hot)


def _onehot(rows, d):
    X = np.zeros((len(rows), d))
    X[np.arange(len(rows)), rows] = 1.0
    return X


def test_scalar_posterior_frozen():
    # prior precision 1, two observations of 3 and 1 with s2 = 1:
    # precision 3, mean 4/3
    d = TaskDataset(_onehot([0, 0], 1), np.array([3.0, 1.0]))
    post = exact_sequential_posterior([d], 1.0)
    assert post.precision_diag[0] == 3.0
    assert post.mean[0] == pytest.approx(4 / 3, rel=1e-15)


def test_sequential_equals_batch(rng):
    tasks = [TaskDataset(rng.standard_normal((10, 4)), rng.standard_normal(10)) for _ in range(3)]
    seq = exact_sequential_posterior(tasks, 0.3, 0.7, diagonal=False)
    X = np.vstack([t.inputs for t in tasks])
    y = np.concatenate([t.targets[:, 0] for t in tasks])
    Lam = 0.3 * np.eye(4) + X.T @ X / 0.7
    np.testing.assert_allclose(seq.mean, np.linalg.solve(Lam, X.T @ y / 0.7), rtol=1e-10)
    np.testing.assert_allclose(seq.dense_precision, Lam, rtol=1e-12)


def test_diagonal_and_dense_agree_for_one_hot(rng):
    tasks = [TaskDataset(_onehot(rng.integers(0, 5, 12), 5), rng.standard_normal(12)) for _ in range(2)]
    a = exact_sequential_posterior(tasks, 0.1)
    b = exact_sequential_posterior(tasks, 0.1, diagonal=False)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12)
    np.testing.assert_allclose(a.precision_diag, b.precision_diag, rtol=1e-12)


def test_unobserved_coordinate_without_prior_has_zero_mean():
    post = exact_sequential_posterior([TaskDataset(_onehot([0, 0], 2), np.array([1.0, 2.0]))], 0.0)
    np.testing.assert_array_equal(post.mean, [1.5, 0.0])
    np.testing.assert_array_equal(post.precision_diag, [2.0, 0.0])


def test_non_one_hot_rejected_in_diagonal_mode(rng):
    d = TaskDataset(rng.standard_normal((4, 3)), rng.standard_normal(4))
    assert not is_one_hot(d.inputs)
    with pytest.raises(ValueError):
        exact_sequential_posterior([d], 1.0)
    with pytest.raises(ValueError):
        exact_sequential_posterior([d], 1.0, bias=True)
    with pytest.raises(ValueError):
        exact_sequential_posterior([TaskDataset(np.ones((2, 3)), np.array([0, 1]))], 1.0,
                                   diagonal=False)


def test_fd_hessian_of_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    H = fd_hessian(lambda x: 0.5 * x @ A @ x + x[0], np.array([0.3, -0.2]))
    np.testing.assert_allclose(H, A, atol=1e-6)
    np.testing.assert_allclose(fd_gradient(lambda x: 0.5 * x @ A @ x, np.ones(2)), A @ np.ones(2),
                               atol=1e-8)


def test_dense_laplace_matches_conjugate_precision(rng):
    arch = Architecture((3, 1), "identity", "gaussian", 0.5, bias=False)
    data = TaskDataset(rng.standard_normal((15, 3)), rng.standard_normal(15))
    exact = exact_sequential_posterior([data], 0.2, 0.5, diagonal=False)

    def obj(t):
        return neg_log_likelihood(arch, t, data) + 0.1 * t @ t

    lap = dense_laplace(exact.mean, obj)
    np.testing.assert_allclose(lap.dense_precision, exact.dense_precision, rtol=1e-5)


def test_dense_laplace_refuses_non_optimum():
    with pytest.raises(NotAtOptimumError):
        dense_laplace(np.ones(2), lambda x: float(x @ x))
