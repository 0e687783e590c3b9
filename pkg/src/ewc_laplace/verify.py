"""Built-in self-test run by ``ewc-laplace verify``.

Each check returns ``(passed, detail)``. ``fault="printed-denominator"``
makes every debiased centre divide by the unweighted Fisher, which should
make the decomposition checks fail.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import consolidate as cons
from .fisher import empirical_fisher_diag
from .net import Architecture, TaskDataset, grad_nll, neg_log_likelihood, per_example_grads
from .oracle import exact_sequential_posterior, fd_gradient
from .tasks import TaskSpec, generate_sequence
from .trainer import OptimizerConfig, run_sequence

FAULTS = ("printed-denominator",)


def _rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def _random_instance(rng, head):
    arch = Architecture((3, 4, 3 if head == "categorical" else 2), "tanh", head, noise_variance=0.7)
    X = rng.standard_normal((6, 3))
    if head == "categorical":
        y = rng.integers(0, 3, size=6)
    else:
        y = rng.standard_normal((6, 2))
    return arch, rng.standard_normal(arch.n_params) * 0.8, TaskDataset(X, y)


def check_gradients(head: str, n: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        arch, theta, data = _random_instance(rng, head)
        g = grad_nll(arch, theta, data)
        fd = fd_gradient(lambda t: neg_log_likelihood(arch, t, data), theta, 1e-5)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-4))))
        worst = max(worst, float(np.max(np.abs(per_example_grads(arch, theta, data).sum(0) - g))))
    return worst < 1e-4, f"worst relative error {worst:.2e}"


def random_bank_gap(rng, lambda_prior: float, P: int = 50, n_tasks: int = 3,
                    denominator: str = "weighted", revisit: bool = False) -> float:
    """Largest |grad(single) - grad(bank)| over 100 random points for a random consolidation."""
    post = cons.ConsolidatedPosterior(np.zeros(P), np.full(P, lambda_prior), lambda_prior)
    bank = cons.empty_bank(lambda_prior, P)
    for t in range(n_tasks):
        theta_opt = rng.standard_normal(P)
        F = rng.uniform(0.05, 2.0, P)
        lam = 64.0
        bank = bank.with_penalty(cons.debiased_center(bank, post, theta_opt, F, lam, f"t{t}",
                                                      denominator=denominator))
        post = cons.consolidate_single(post, theta_opt, F, lam, f"t{t}")
    if revisit:
        rest = cons.drop_penalty(bank, "t0")
        theta_opt = rng.standard_normal(P)
        F = rng.uniform(0.05, 2.0, P)
        bank = rest.with_penalty(cons.debiased_center(rest, None, theta_opt, F, 64.0, "t0",
                                                      denominator=denominator))
        post = cons.ConsolidatedPosterior(theta_opt, bank.total_precision(), lambda_prior,
                                          tuple((t, 64.0) for t in bank.task_ids))
    gap = 0.0
    for _ in range(100):
        theta = 3 * rng.standard_normal(P)
        gap = max(gap, float(np.max(np.abs(post.grad(theta) - bank.grad(theta)))))
    return gap


def check_decomposition(lambda_prior: float, fault: str | None = None, seed: int = 1):
    denom = "fisher" if fault == "printed-denominator" else "weighted"
    rng = np.random.default_rng(seed)
    gap = max(random_bank_gap(rng, lambda_prior, denominator=denom),
              random_bank_gap(rng, lambda_prior, denominator=denom, revisit=True))
    return gap < 1e-8, f"max gradient gap {gap:.2e}"


def check_fisher_exact(seed: int = 2):
    spec = TaskSpec("diag_linear_gaussian", 64, 16, seed=seed)
    (data,) = generate_sequence([spec])
    arch = Architecture((16, 1), "identity", "gaussian", 1.0, bias=False)
    mle = exact_sequential_posterior([data], 0.0, 1.0).mean
    F = empirical_fisher_diag(arch, mle, data, "observed")
    err = float(np.max(np.abs(len(data) * F - np.einsum("ni,ni->i", data.inputs, data.inputs))))
    return err < 1e-8, f"max |N F - diag(X^T X)| {err:.2e}"


def check_conjugate(lambda_prior: float):
    arch = Architecture((16, 1), "identity", "gaussian", 1.0, bias=False)
    specs = [TaskSpec("diag_linear_gaussian", 64, 16, seed=s, task_id=f"T{s}") for s in (11, 12, 13)]
    rep = run_sequence(specs, "laplace_single", cons.Hyperparams(lambda_prior, {}, "expected"),
                       OptimizerConfig(learning_rate=1.0, grad_tol=1e-9), arch)
    post = exact_sequential_posterior(generate_sequence(specs), lambda_prior, 1.0)
    d_mean = float(np.max(np.abs(rep.state.posterior.anchor - post.mean)))
    d_prec = float(np.max(np.abs(rep.state.posterior.precision - post.precision_diag)))
    ok = d_mean < 1e-6 and d_prec < 1e-8 and all(rep.converged)
    return ok, f"mean error {d_mean:.2e}, precision error {d_prec:.2e}"


def checks(fault: str | None = None) -> list[tuple[str, Callable[[], tuple[bool, str]]]]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    return [
        ("gradient/gaussian", lambda: check_gradients("gaussian")),
        ("gradient/categorical", lambda: check_gradients("categorical")),
        ("fisher/diagonal-design-exact", check_fisher_exact),
        ("decomposition/lambda_prior=0", lambda: check_decomposition(0.0, fault)),
        ("decomposition/lambda_prior=0.1", lambda: check_decomposition(0.1, fault)),
        ("conjugate/lambda_prior=0", lambda: check_conjugate(0.0)),
        ("conjugate/lambda_prior=0.1", lambda: check_conjugate(0.1)),
    ]


def run(fault: str | None = None, out=print) -> list[str]:
    """Run every check, print one line each, and return the names of failures."""
    failed = []
    for name, fn in checks(fault):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        if not ok:
            failed.append(name)
    return failed
