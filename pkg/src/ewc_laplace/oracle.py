"""Exact reference posteriors.

``exact_sequential_posterior`` conditions a Gaussian prior on linear-Gaussian
tasks one at a time in information form. ``dense_laplace`` measures the full
Hessian of an arbitrary objective by central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .net import NumericError, TaskDataset


class NotAtOptimumError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mean: np.ndarray
    precision_diag: np.ndarray
    dense_precision: np.ndarray | None = None


def is_one_hot(X: np.ndarray) -> bool:
    X = np.asarray(X)
    return bool(np.all((X != 0).sum(axis=1) == 1))


def _design(data: TaskDataset, bias: bool):
    if data.is_classification or data.targets.shape[1] != 1:
        raise ValueError("oracle needs single-output regression tasks")
    X = data.inputs
    if bias:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X, data.targets[:, 0]


def exact_sequential_posterior(tasks: Sequence[TaskDataset], lambda_prior: float,
                               noise_variance: float = 1.0, diagonal: bool = True,
                               bias: bool = False, dim: int | None = None) -> GaussianPosterior:
    """Conjugate posterior of a linear-Gaussian model after all ``tasks``.

    Each task is folded in with one Bayes update: the precision gains
    ``X^T X / noise_variance`` and the mean is re-solved from the previous
    mean. With ``diagonal=True`` every input row must be one-hot (and
    ``bias`` must be off) so the posterior precision is exactly diagonal.
    Coordinates with zero precision (no prior, never observed) get mean 0.
    """
    if diagonal and bias:
        raise ValueError("a bias column makes the design non-diagonal")
    if dim is None:
        if not tasks:
            raise ValueError("dim is required when no tasks are given")
        dim = tasks[0].inputs.shape[1] + (1 if bias else 0)
    s2 = float(noise_variance)

    if diagonal:
        prec = np.full(dim, float(lambda_prior))
        mean = np.zeros(dim)
        for data in tasks:
            X, y = _design(data, bias)
            if not is_one_hot(X):
                raise ValueError(f"task {data.task_id!r} does not have a one-hot design")
            if X.shape[1] != dim:
                raise ValueError("task input width does not match the posterior")
            info = prec * mean + X.T @ y / s2
            prec = prec + np.einsum("ni,ni->i", X, X) / s2
            mean = np.divide(info, prec, out=np.zeros(dim), where=prec > 0)
        return GaussianPosterior(mean, prec)

    Lam = float(lambda_prior) * np.eye(dim)
    mean = np.zeros(dim)
    for data in tasks:
        X, y = _design(data, bias)
        if X.shape[1] != dim:
            raise ValueError("task input width does not match the posterior")
        info = Lam @ mean + X.T @ y / s2
        Lam = Lam + X.T @ X / s2
        mean = np.linalg.solve(Lam, info)
    return GaussianPosterior(mean, np.diag(Lam).copy(), Lam)


def fd_gradient(objective: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (objective(xp) - objective(xm)) / (2 * step)
    return g


def fd_hessian(objective: Callable[[np.ndarray], float], x, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian, symmetric by construction."""
    x = np.array(x, dtype=float)
    P = x.size
    H = np.empty((P, P))
    e = np.eye(P) * step

    def f(v):
        val = objective(v)
        if not np.isfinite(val):
            raise NumericError("objective is not finite near the optimum")
        return val

    for i in range(P):
        for j in range(i, P):
            fpp = f(x + e[i] + e[j])
            fpm = f(x + e[i] - e[j])
            fmp = f(x - e[i] + e[j])
            fmm = f(x - e[i] - e[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * step * step)
    return 0.5 * (H + H.T)


def dense_laplace(params_opt, objective: Callable[[np.ndarray], float],
                  step: float = 1e-4, grad_tol: float = 1e-4) -> GaussianPosterior:
    """Full-Hessian Laplace approximation around a verified local minimum."""
    params_opt = np.array(params_opt, dtype=float)
    g = fd_gradient(objective, params_opt)
    gnorm = float(np.max(np.abs(g)))
    if not np.isfinite(gnorm):
        raise NumericError("objective gradient is not finite")
    if gnorm > grad_tol:
        raise NotAtOptimumError(f"gradient inf-norm {gnorm:.3g} exceeds {grad_tol:.3g}; not at optimum")
    H = fd_hessian(objective, params_opt, step)
    return GaussianPosterior(params_opt, np.diag(H).copy(), H)
