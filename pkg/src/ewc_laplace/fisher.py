"""Diagonal Fisher information estimates.

All estimators return the per-example average, so a caller scales by the
sample count (or by a task weight) to get a precision contribution.

Modes:

* ``observed``: squared gradients at the observed targets (empirical Fisher).
* ``sampled``: targets are first drawn from the model's predictive
  distribution with a seeded generator, then the same computation is done.
* ``expected``: the exact expectation of the squared gradient under the
  model's predictive distribution. For a linear Gaussian model this equals
  the exact Hessian of the negative log-likelihood divided by N.
"""

from __future__ import annotations

import numpy as np

from .net import (Architecture, TaskDataset, check_params, forward,
                  output_jacobian_grads, per_example_grads)

FISHER_MODES = ("observed", "sampled", "expected")


def empirical_fisher_diag(arch: Architecture, params, data: TaskDataset,
                          mode: str = "observed", seed: int | None = 0) -> np.ndarray:
    params = check_params(arch, params)
    if data is None or len(data) == 0:
        raise ValueError("cannot estimate a Fisher diagonal from an empty dataset")
    if mode == "observed":
        G = per_example_grads(arch, params, data)
        return _mean_square(G)
    if mode == "sampled":
        sampled = TaskDataset(data.inputs, sample_targets(arch, params, data.inputs, seed),
                              data.task_id)
        return _mean_square(per_example_grads(arch, params, sampled))
    if mode == "expected":
        return _expected_fisher_diag(arch, params, data.inputs)
    raise ValueError(f"unknown Fisher mode {mode!r}; expected one of {FISHER_MODES}")


def _mean_square(G: np.ndarray) -> np.ndarray:
    # rows summed in index order
    return np.einsum("np,np->p", G, G) / G.shape[0]


def sample_targets(arch: Architecture, params, inputs, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = forward(arch, params, inputs)
    if arch.head == "categorical":
        u = rng.random(out.shape[0])
        cdf = np.cumsum(out, axis=1)
        idx = (u[:, None] > cdf).sum(axis=1)
        return np.minimum(idx, arch.output_dim - 1).astype(np.int64)
    return out + np.sqrt(arch.noise_variance) * rng.standard_normal(out.shape)


def _expected_fisher_diag(arch: Architecture, params, inputs) -> np.ndarray:
    out, J = output_jacobian_grads(arch, params, inputs)
    N = out.shape[0]
    if arch.head == "gaussian":
        # E[(J^T r / s2)^2] with r ~ N(0, s2 I) is sum_k J_k^2 / s2
        return np.einsum("knp,knp->p", J, J) / (arch.noise_variance * N)
    # softmax: E_y[g_y^2] with g_y = J^T (p - e_y)
    z = out - out.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    Jp = np.einsum("nk,knp->np", p, J)
    total = np.zeros(arch.n_params)
    for k in range(out.shape[1]):
        g = Jp - J[k]
        total += np.einsum("n,np->p", p[:, k], g * g)
    return total / N
