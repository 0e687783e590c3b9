"""Penalised training and full sequential experiments.

A penalty is anything with ``value(theta)`` and ``grad(theta)``:
:class:`QuadraticPenalty`, :class:`ConsolidatedPosterior`,
:class:`PenaltyBank`, or None.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import consolidate as cons
from . import serialize
from .fisher import empirical_fisher_diag
from .net import (Architecture, NumericError, TaskDataset, concat, grad_nll,
                  neg_log_likelihood)
from .oracle import exact_sequential_posterior, is_one_hot
from .tasks import TaskSpec, generate, positioned

log = logging.getLogger(__name__)

STRATEGIES = ("naive", "ewc_multi", "laplace_single", "laplace_multi_debiased", "joint")
METHODS = ("gradient_descent", "gradient_descent_momentum")


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UnsupportedOperationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Full-batch gradient descent settings.

    Plain gradient descent backtracks (halving the step until the objective
    does not increase beyond round-off) and lets the trial step grow back by
    2x per iteration up to ``learning_rate``. Momentum runs use the fixed
    step. ``batch_size`` switches to seeded shuffled minibatches.
    """

    method: str = "gradient_descent"
    learning_rate: float = 0.5
    momentum: float = 0.0
    max_steps: int = 20000
    grad_tol: float = 1e-5
    seed: int = 0
    batch_size: int | None = None
    line_search: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: np.ndarray
    converged: bool
    steps: int
    objective: float
    grad_norm: float
    trace: tuple[float, ...] = ()


def penalized_objective(arch: Architecture, data: TaskDataset | None, penalty):
    """Return ``(f, fg)``: objective and objective-with-gradient closures."""

    def f(theta):
        val = 0.0 if data is None else neg_log_likelihood(arch, theta, data)
        if penalty is not None:
            val += penalty.value(theta)
        return val

    def fg(theta):
        val = f(theta)
        g = np.zeros(arch.n_params) if data is None else grad_nll(arch, theta, data)
        if penalty is not None:
            g = g + penalty.grad(theta)
        return val, g

    return f, fg


def _safe(f, theta):
    try:
        v = f(theta)
    except NumericError:
        return np.inf
    return v if np.isfinite(v) else np.inf


def _trapezoid_decrease(fg, cand, g, lr) -> float:
    try:
        _, gc = fg(cand)
    except NumericError:
        return np.inf
    return -0.5 * lr * float(g @ g + gc @ g)


def train_task(arch: Architecture, data: TaskDataset | None, init, penalty,
               opt: OptimizerConfig, record_trace: bool = False) -> TrainResult:
    """Minimise task negative log-likelihood plus ``penalty`` starting from ``init``.

    Stops once the gradient inf-norm drops below ``opt.grad_tol``; otherwise
    returns the best iterate after ``opt.max_steps`` with ``converged=False``.
    """
    theta = np.array(init, dtype=float)
    if theta.shape != (arch.n_params,):
        raise ValueError(f"init has shape {theta.shape}, expected ({arch.n_params},)")
    f, fg = penalized_objective(arch, data, penalty)
    if opt.batch_size is not None and data is not None:
        return _train_minibatch(arch, data, theta, penalty, opt, f, fg)

    val, g = fg(theta)
    if not np.isfinite(val):
        raise TrainingError("objective is not finite at the initial point", 0)
    trace = [val] if record_trace else None
    best = (val, theta)
    velocity = np.zeros_like(theta)
    lr = opt.learning_rate
    for step in range(opt.max_steps):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < opt.grad_tol:
            return TrainResult(theta, True, step, val, gnorm, tuple(trace or ()))
        if opt.method == "gradient_descent" and opt.line_search:
            lr = min(opt.learning_rate, 2.0 * lr)
            noise = 1e-12 * max(1.0, abs(val))
            gg = float(g @ g)
            for _ in range(200):
                cand = theta - lr * g
                cval = _safe(f, cand)
                if abs(cval - val) <= noise:
                    # change lost in round-off: estimate it by the trapezoid
                    # rule on the gradient (exact for quadratics)
                    change = _trapezoid_decrease(fg, cand, g, lr)
                else:
                    change = cval - val
                if change <= -1e-4 * lr * gg:
                    break
                lr *= 0.5
            else:
                log.debug("line search stalled at step %d", step)
                return TrainResult(theta, False, step, val, gnorm, tuple(trace or ()))
            theta = cand
        else:
            velocity = opt.momentum * velocity - opt.learning_rate * g
            theta = theta + velocity
        try:
            val, g = fg(theta)
        except NumericError as exc:
            raise TrainingError(f"training diverged at step {step + 1}: {exc}", step + 1) from exc
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            raise TrainingError(f"training diverged at step {step + 1}", step + 1)
        if record_trace:
            trace.append(val)
        if val < best[0]:
            best = (val, theta)
    gnorm = float(np.max(np.abs(g)))
    if gnorm < opt.grad_tol:
        return TrainResult(theta, True, opt.max_steps, val, gnorm, tuple(trace or ()))
    bval, btheta = best
    _, bg = fg(btheta)
    return TrainResult(btheta, False, opt.max_steps, bval, float(np.max(np.abs(bg))),
                       tuple(trace or ()))


def _train_minibatch(arch, data, theta, penalty, opt, f, fg):
    rng = np.random.default_rng(opt.seed)
    N = len(data)
    B = min(opt.batch_size, N)
    velocity = np.zeros_like(theta)
    step = 0
    while step < opt.max_steps:
        order = rng.permutation(N)
        for start in range(0, N - B + 1, B):
            batch = data.subset(order[start:start + B])
            g = grad_nll(arch, theta, batch) * (N / B)
            if penalty is not None:
                g = g + penalty.grad(theta)
            velocity = opt.momentum * velocity - opt.learning_rate * g
            theta = theta + velocity
            step += 1
            if not np.all(np.isfinite(theta)):
                raise TrainingError(f"training diverged at step {step}", step)
            if step >= opt.max_steps:
                break
        val, gfull = fg(theta)
        if not np.isfinite(val):
            raise TrainingError(f"training diverged at step {step}", step)
        gnorm = float(np.max(np.abs(gfull)))
        if gnorm < opt.grad_tol:
            return TrainResult(theta, True, step, val, gnorm)
    return TrainResult(theta, False, step, val, gnorm)


# --------------------------------------------------------------------------
# sequential experiments


@dataclass(eq=False)
class SequenceState:
    """Mutable bookkeeping of one strategy run; revisits return a new copy."""

    strategy: str
    arch: Architecture
    hyper: cons.Hyperparams
    specs: list[TaskSpec]
    params: np.ndarray
    posterior: cons.ConsolidatedPosterior | None = None
    bank: cons.PenaltyBank | None = None
    fishers: dict = field(default_factory=dict)
    optima: dict = field(default_factory=dict)

    def spec(self, task_id: str) -> TaskSpec:
        for s in self.specs:
            if s.label == task_id:
                return s
        raise KeyError(task_id)

    def penalty(self):
        if self.strategy == "laplace_single":
            return self.posterior
        return self.bank


@dataclass(eq=False)
class RunReport:
    strategy: str
    task_ids: list[str]
    loss_matrix: list[list[float | None]]
    proxy_matrix: list[list[float | None]]
    stage_params: list[np.ndarray]
    converged: list[bool]
    steps: list[int]
    state_sizes: list[int]
    oracle_distance: list[float] | None
    oracle_precision_error: list[float] | None
    config: dict
    wall_clock: list[float]
    state: SequenceState | None = None

    @property
    def final_params(self) -> np.ndarray:
        return self.stage_params[-1]

    def to_dict(self) -> dict:
        """Deterministic part of the report (wall-clock times are left out)."""
        return {
            "schema": "run_report", "version": serialize.SCHEMA_VERSION,
            "strategy": self.strategy, "task_ids": list(self.task_ids),
            "loss_matrix": self.loss_matrix, "proxy_matrix": self.proxy_matrix,
            "stage_params": [[float(x) for x in p] for p in self.stage_params],
            "converged": list(self.converged), "steps": list(self.steps),
            "state_sizes": list(self.state_sizes),
            "oracle_distance": self.oracle_distance,
            "oracle_precision_error": self.oracle_precision_error,
            "config": self.config,
        }


def oracle_applicable(arch: Architecture, datasets: Sequence[TaskDataset]) -> bool:
    return (len(arch.layer_sizes) == 2 and arch.head == "gaussian" and arch.output_dim == 1
            and all(not d.is_classification for d in datasets))


def _oracle(arch, datasets, lambda_prior):
    diagonal = not arch.bias and all(is_one_hot(d.inputs) for d in datasets)
    return exact_sequential_posterior(datasets, lambda_prior, arch.noise_variance,
                                      diagonal=diagonal, bias=arch.bias, dim=arch.n_params)


def _fisher(state: SequenceState, params, data, stage: int, seed: int):
    return empirical_fisher_diag(state.arch, params, data, state.hyper.fisher_mode,
                                 seed=seed + 1000 * stage)


def run_sequence(specs: Sequence[TaskSpec], strategy: str, hyper: cons.Hyperparams,
                 opt: OptimizerConfig, arch: Architecture, init_seed: int = 0,
                 datasets: Sequence[TaskDataset] | None = None) -> RunReport:
    """Train on ``specs`` in order under ``strategy`` and evaluate every task after every stage."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not specs:
        raise ValueError("need at least one task")
    specs = positioned(specs)
    if datasets is None:
        datasets = []
        prev = None
        for s in specs:
            datasets.append(generate(s, prev))
            prev = s
    datasets = list(datasets)
    ids = [s.label for s in specs]
    T = len(specs)
    P = arch.n_params

    state = SequenceState(strategy, arch, hyper, list(specs), arch.init_params(init_seed))
    if strategy == "laplace_single":
        state.posterior = cons.init_posterior(hyper, P)
    else:
        state.bank = cons.empty_bank(hyper.lambda_prior, P)

    use_oracle = oracle_applicable(arch, datasets)
    loss = [[None] * T for _ in range(T)]
    proxy = [[None] * T for _ in range(T)]
    proxies: list[cons.QuadraticPenalty] = []
    stage_params, converged, steps, sizes, times = [], [], [], [], []
    dist, prec_err = ([], []) if use_oracle else (None, None)

    for s, (spec, data) in enumerate(zip(specs, datasets)):
        t0 = time.perf_counter()
        tid = ids[s]
        train_data = concat(datasets[:s + 1]) if strategy == "joint" else data
        res = train_task(arch, train_data, state.params, state.penalty(), opt)
        if not res.converged:
            log.warning("%s: stage %d (%s) did not converge, grad norm %.3g",
                        strategy, s, tid, res.grad_norm)
        theta = res.params
        F = _fisher(state, theta, data, s, opt.seed)
        lam = hyper.lam(tid, len(data))
        state.params = theta
        state.fishers[tid] = F
        state.optima[tid] = theta

        if strategy == "laplace_single":
            state.posterior = cons.consolidate_single(state.posterior, theta, F, lam, tid)
            proxies.append(cons.QuadraticPenalty(theta, lam * F, tid))
            sizes.append(len(serialize.posterior_state_bytes(state.posterior)))
        elif strategy == "ewc_multi":
            pen = cons.QuadraticPenalty(theta, lam * F, tid)
            state.bank = state.bank.with_penalty(pen)
            proxies.append(pen)
            sizes.append(len(serialize.bank_state_bytes(state.bank)))
        elif strategy == "laplace_multi_debiased":
            pen = cons.debiased_center(state.bank, None, theta, F, lam, tid)
            state.bank = state.bank.with_penalty(pen)
            proxies.append(pen)
            sizes.append(len(serialize.bank_state_bytes(state.bank)))
        else:
            proxies.append(cons.QuadraticPenalty(theta, lam * F, tid))
            sizes.append(0)

        for t in range(s + 1):
            loss[t][s] = neg_log_likelihood(arch, theta, datasets[t])
            proxy[t][s] = cons.per_task_loss_proxy(proxies[t], theta)
        if use_oracle:
            post = _oracle(arch, datasets[:s + 1], hyper.lambda_prior)
            dist.append(float(np.max(np.abs(theta - post.mean))))
            if strategy == "laplace_single":
                prec_err.append(float(np.max(np.abs(state.posterior.precision - post.precision_diag))))
            elif strategy == "laplace_multi_debiased":
                prec_err.append(float(np.max(np.abs(state.bank.total_precision() - post.precision_diag))))
            else:
                prec_err.append(None)
        stage_params.append(theta)
        converged.append(bool(res.converged))
        steps.append(int(res.steps))
        times.append(time.perf_counter() - t0)
        log.info("%s stage %d (%s): loss %.6g, %d steps", strategy, s, tid, loss[s][s], res.steps)

    config = {"tasks": [sp.to_dict() for sp in specs], "strategy": strategy,
              "hyper": hyper.to_dict(), "optimizer": opt.to_dict(),
              "architecture": arch.to_dict(), "init_seed": init_seed}
    return RunReport(strategy, ids, loss, proxy, stage_params, converged, steps, sizes,
                     dist, prec_err, config, times, state)


def revisit_task(state: SequenceState, task_id: str, opt: OptimizerConfig,
                 data: TaskDataset | None = None) -> SequenceState:
    """Drop a task's penalty, relearn its data against the rest, and reinsert it.

    Only the debiased multi-penalty strategy keeps the per-task penalties this
    needs. The dataset is regenerated from its spec unless given.
    """
    if state.strategy != "laplace_multi_debiased":
        raise UnsupportedOperationError(
            f"revisiting needs per-task debiased penalties; strategy is {state.strategy!r}")
    if data is None:
        data = generate(state.spec(task_id))
    rest = cons.drop_penalty(state.bank, task_id)
    res = train_task(state.arch, data, state.params, rest, opt)
    if not res.converged:
        log.warning("revisit of %s did not converge, grad norm %.3g", task_id, res.grad_norm)
    theta = res.params
    stage = [s.label for s in state.specs].index(task_id)
    F = _fisher(state, theta, data, stage, opt.seed)
    lam = state.hyper.lam(task_id, len(data))
    pen = cons.debiased_center(rest, None, theta, F, lam, task_id)
    new = dataclasses.replace(state, params=theta, bank=cons.add_penalty(rest, pen),
                              fishers={**state.fishers, task_id: F},
                              optima={**state.optima, task_id: theta})
    return new


def consolidated_view(state: SequenceState) -> cons.ConsolidatedPosterior:
    """Single-penalty equivalent of a debiased bank, anchored at the current parameters."""
    bank = state.bank
    log_ = tuple((p.label, state.hyper.lam(p.label, state.spec(p.label).n_samples))
                 for p in bank.penalties)
    return cons.ConsolidatedPosterior(state.params, bank.total_precision(),
                                      bank.prior_precision, log_)
