"""Acceptance criteria 1 to 9, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal
summary (and to stdout when run with ``-s``).
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from ewc_laplace import config as cfgmod
from ewc_laplace import consolidate as cons
from ewc_laplace import verify
from ewc_laplace.fisher import empirical_fisher_diag
from ewc_laplace.net import Architecture, TaskDataset, forward, grad_nll, neg_log_likelihood
from ewc_laplace.oracle import dense_laplace, exact_sequential_posterior
from ewc_laplace.tasks import TaskSpec, generate, generate_sequence
from ewc_laplace.trainer import OptimizerConfig, revisit_task, run_sequence, train_task

from conftest import ACCEPTANCE, central_diff

ROOT = Path(__file__).resolve().parents[1]
LIN = Architecture((16, 1), "identity", "gaussian", 1.0, bias=False)
OPT = OptimizerConfig(learning_rate=1.0, grad_tol=1e-9)


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _diag_specs(n):
    return [TaskSpec("diag_linear_gaussian", 64, 16, seed=10 + i, task_id=f"T{i}",
                     target_offset=(-1.0) ** i) for i in range(n)]


def test_criterion_1_exact_on_quadratics():
    t0 = time.perf_counter()
    worst_mean = worst_prec = 0.0
    for lp in (0.1, 1.0):
        for n in (3, 5):
            specs = _diag_specs(n)
            rep = run_sequence(specs, "laplace_single", cons.Hyperparams(lp, {}, "expected"), OPT, LIN)
            post = exact_sequential_posterior(generate_sequence(specs), lp)
            worst_mean = max(worst_mean, float(np.max(np.abs(rep.final_params - post.mean))))
            worst_prec = max(worst_prec, float(np.max(np.abs(rep.state.posterior.precision
                                                                - post.precision_diag))))
    dt = time.perf_counter() - t0
    record(1, worst_mean < 1e-6 and worst_prec < 1e-8,
           f"mean err {worst_mean:.2e} (<1e-6), precision err {worst_prec:.2e} (<1e-8), {dt:.2f}s")


def test_criterion_2_double_counting():
    cfg = cfgmod.load(ROOT / "configs" / "double_counting.cfg")
    reps = {s: run_sequence(cfg.tasks, s, cfg.hyper, cfg.optimizer, cfg.arch) for s in cfg.strategies}
    datasets = generate_sequence(cfg.tasks)
    exact = exact_sequential_posterior(datasets, cfg.hyper.lambda_prior).mean
    solo_a = exact_sequential_posterior(datasets[:1], 0.0).mean
    multi, single = reps["ewc_multi"].final_params, reps["laplace_single"].final_params
    d_a = (np.linalg.norm(multi - solo_a), np.linalg.norm(single - solo_a))
    d_b = (np.linalg.norm(multi - exact), np.linalg.norm(single - exact))
    ok = d_a[0] < d_a[1] and d_b[0] >= 10 * d_b[1]
    record(2, ok, f"to task-A optimum: ewc_multi {d_a[0]:.3f} < laplace_single {d_a[1]:.3f}; "
                  f"to exact mean: {d_b[0]:.3e} vs {d_b[1]:.3e}")


def test_criterion_3_decomposition_identity():
    rng = np.random.default_rng(2024)
    gaps = {}
    for lp in (0.0, 0.1, 1.0):
        gaps[lp] = max(verify.random_bank_gap(rng, lp), verify.random_bank_gap(rng, lp, revisit=True))
    worst = max(gaps.values())
    record(3, worst < 1e-8, f"max gradient gap {worst:.2e} over lambda_prior {sorted(gaps)} "
                            f"incl. revisit (<1e-8)")


def test_criterion_4_revisit_exactness():
    specs = [TaskSpec("diag_linear_gaussian", 64, 16, seed=1, task_id="A", target_offset=2.0),
             TaskSpec("diag_linear_gaussian", 64, 16, seed=2, task_id="B", target_offset=-2.0)]
    exact = exact_sequential_posterior(generate_sequence(specs), 0.1).mean
    right = cons.Hyperparams(0.1, {}, "expected")
    # task A first consolidated with a wrong weight, then revisited with the right one
    wrong = run_sequence(specs, "laplace_multi_debiased",
                         cons.Hyperparams(0.1, {"A": 32.0}, "expected"), OPT, LIN)
    before = float(np.max(np.abs(wrong.final_params - exact)))
    fixed = revisit_task(dataclasses.replace(wrong.state, hyper=right), "A", OPT)
    after = float(np.max(np.abs(fixed.params - exact)))
    good = run_sequence(specs, "laplace_multi_debiased", right, OPT, LIN)
    again = revisit_task(good.state, "A", OPT)
    moved = max(float(np.max(np.abs(again.bank[t].center - good.state.bank[t].center)))
                for t in ("A", "B"))
    record(4, after < 1e-6 and moved < 1e-6,
           f"revisit error {before:.2e} -> {after:.2e} (<1e-6); centre shift at exact state {moved:.2e}")


def test_criterion_5_gradient_correctness():
    rng = np.random.default_rng(5)
    worst, largest = 0.0, 0
    for head in ("gaussian", "categorical"):
        for _ in range(20):
            sizes = (int(rng.integers(2, 6)), int(rng.integers(2, 8)), int(rng.integers(2, 4)))
            arch = Architecture(sizes, "tanh", head, noise_variance=float(rng.uniform(0.3, 2.0)))
            largest = max(largest, arch.n_params)
            n = int(rng.integers(1, 12))
            X = rng.standard_normal((n, sizes[0]))
            y = rng.integers(0, sizes[-1], n) if head == "categorical" else rng.standard_normal((n, sizes[-1]))
            data = TaskDataset(X, y)
            theta = rng.standard_normal(arch.n_params)
            g = grad_nll(arch, theta, data)
            fd = central_diff(lambda t: neg_log_likelihood(arch, t, data), theta)
            # floor keeps entries that are zero up to round-off from dominating
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
            worst = max(worst, float(np.max(rel)))
    record(5, worst < 1e-4 and largest <= 100,
           f"worst relative error {worst:.2e} (<1e-4) over 40 instances, P <= {largest}")


def test_criterion_6_fisher_sanity():
    worst = 0.0
    for seed in range(5):
        data = generate(TaskSpec("diag_linear_gaussian", 64, 16, seed=seed))
        mle = exact_sequential_posterior([data], 0.0).mean
        F = empirical_fisher_diag(LIN, mle, data, "observed")
        worst = max(worst, float(np.max(np.abs(64 * F - (data.inputs ** 2).sum(axis=0)))))

    # measurement only: curvature of a near-interpolating tanh regression net
    rng = np.random.default_rng(6)
    arch = Architecture((3, 4, 1), "tanh", "gaussian", 1.0)
    teacher = rng.standard_normal(arch.n_params)
    X = rng.standard_normal((40, 3))
    data = TaskDataset(X, forward(arch, teacher, X) + 0.05 * rng.standard_normal((40, 1)))
    lp = 1.0
    res = train_task(arch, data, teacher, cons.prior_penalty(lp, arch.n_params),
                     OptimizerConfig(grad_tol=1e-8, max_steps=50000))
    lap = dense_laplace(res.params, lambda t: neg_log_likelihood(arch, t, data)
                        + cons.prior_penalty(lp, arch.n_params).value(t))
    h = lap.precision_diag
    gaps = {}
    for mode in ("observed", "expected"):
        approx = 40 * empirical_fisher_diag(arch, res.params, data, mode) + lp
        gaps[mode] = float(np.max(np.abs(h - approx) / np.abs(h)))
    record(6, worst < 1e-8,
           f"max |N F - diag(X^T X)| {worst:.2e} (<1e-8); neural task relative curvature gap "
           f"observed {gaps['observed']:.3f}, expected {gaps['expected']:.3f} (logged)")


def test_criterion_7_catastrophic_forgetting():
    cfg = cfgmod.load(ROOT / "configs" / "forgetting.cfg")
    t0 = time.perf_counter()
    reps = {s: run_sequence(cfg.tasks, s, cfg.hyper, cfg.optimizer, cfg.arch, cfg.init_seed)
            for s in ("naive", "laplace_single")}
    dt = time.perf_counter() - t0
    naive, lap = reps["naive"].loss_matrix, reps["laplace_single"].loss_matrix
    a_ratio = naive[0][-1] / lap[0][-1]
    last_ratio = lap[-1][-1] / naive[-1][-1]
    ok = a_ratio >= 2.0 and last_ratio <= 1.5 and dt < 60
    record(7, ok, f"task-A loss naive/laplace {a_ratio:.2f} (>=2); final-task loss "
                  f"laplace/naive {last_ratio:.2f} (<=1.5); {dt:.1f}s")


def test_criterion_8_storage():
    specs = _diag_specs(5)
    hyper = cons.Hyperparams(0.1, {}, "expected")
    single = run_sequence(specs, "laplace_single", hyper, OPT, LIN).state_sizes
    bank = run_sequence(specs, "laplace_multi_debiased", hyper, OPT, LIN).state_sizes
    steps = np.diff(bank).tolist()
    ok = len(set(single)) == 1 and len(set(steps)) == 1 and steps[0] > 0
    record(8, ok, f"single-penalty sizes {single}; bank sizes {bank} (+{steps[0]} per task)")


def test_criterion_9_fault_injection():
    lines = []
    clean = verify.run(out=lines.append)
    faulty = verify.run("printed-denominator", out=lines.append)
    detected = [f for f in faulty if f.startswith("decomposition")]
    record(9, not clean and len(detected) == 2,
           f"clean run failures {clean}; injected fault flagged by {detected}")
