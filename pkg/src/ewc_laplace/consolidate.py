"""Quadratic penalty algebra for sequential consolidation.

Three ways of carrying information from past tasks are supported:

* a single consolidated penalty, anchored at the latest optimum, whose
  precision is the running sum of task precisions plus the prior
  (:class:`ConsolidatedPosterior`, :func:`consolidate_single`);
* the classic one-penalty-per-task bank anchored at each task's own optimum
  (:func:`ewc_multi_penalty`), which counts early tasks more than once;
* a per-task bank with debiased centres (:func:`debiased_center`,
  :func:`decompose`) whose summed gradient equals that of the single
  penalty, so individual tasks can be dropped and revisited.

Penalty values are ``0.5 * sum(q * (theta - c)**2)``. Prior penalties are
centred at zero with precision ``lambda_prior``. Additive constants that
separate the bank from the single penalty are never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .net import DimensionError

DEFAULT_FLOOR = 1e-12


class StateError(RuntimeError):
    """Raised when penalty states that should describe the same tasks disagree."""


def _vec(x, name="vector") -> np.ndarray:
    v = np.array(x, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    v.setflags(write=False)
    return v


def _same_length(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


@dataclass(frozen=True, eq=False)
class QuadraticPenalty:
    center: np.ndarray
    precision: np.ndarray
    label: str = ""

    def __post_init__(self):
        c = _vec(self.center, "center")
        q = _vec(self.precision, "precision")
        _same_length(c, q)
        if np.any(q < 0):
            raise ValueError("precision entries must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "precision", q)

    @property
    def size(self) -> int:
        return self.center.shape[0]

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        _same_length(theta, self.center)
        d = theta - self.center
        return 0.5 * float(np.dot(self.precision, d * d))

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        _same_length(theta, self.center)
        return self.precision * (theta - self.center)


def penalty_value(p: QuadraticPenalty, theta) -> float:
    return p.value(theta)


def penalty_grad(p: QuadraticPenalty, theta) -> np.ndarray:
    return p.grad(theta)


def per_task_loss_proxy(p: QuadraticPenalty, theta) -> float:
    """Quadratic stand-in for a task's loss, up to an additive constant.

    Only meaningful near the task's optimum; for quadratic tasks the
    difference between two points is exact.
    """
    return p.value(theta)


def prior_penalty(lambda_prior: float, P: int) -> QuadraticPenalty:
    return QuadraticPenalty(np.zeros(P), np.full(P, float(lambda_prior)), "prior")


@dataclass(frozen=True)
class Hyperparams:
    """Task weights and prior precision.

    Tasks missing from ``lambda_per_task`` are weighted by their sample count.
    """

    lambda_prior: float = 0.0
    lambda_per_task: Mapping[str, float] = field(default_factory=dict)
    fisher_mode: str = "observed"

    def __post_init__(self):
        if self.lambda_prior < 0:
            raise ValueError("lambda_prior must be >= 0")
        for k, v in self.lambda_per_task.items():
            if not v > 0:
                raise ValueError(f"lambda for task {k!r} must be > 0, got {v}")
        object.__setattr__(self, "lambda_per_task", dict(self.lambda_per_task))

    def lam(self, task_id: str, n_samples: int) -> float:
        return float(self.lambda_per_task.get(task_id, n_samples))

    def to_dict(self) -> dict:
        return {"lambda_prior": self.lambda_prior,
                "lambda_per_task": dict(sorted(self.lambda_per_task.items())),
                "fisher_mode": self.fisher_mode}


@dataclass(frozen=True, eq=False)
class ConsolidatedPosterior:
    anchor: np.ndarray
    precision: np.ndarray
    lambda_prior: float
    task_log: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        a = _vec(self.anchor, "anchor")
        q = _vec(self.precision, "precision")
        _same_length(a, q)
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "precision", q)
        object.__setattr__(self, "task_log", tuple((str(t), float(l)) for t, l in self.task_log))

    @property
    def size(self) -> int:
        return self.anchor.shape[0]

    @property
    def task_ids(self) -> list[str]:
        return [t for t, _ in self.task_log]

    @property
    def penalty(self) -> QuadraticPenalty:
        return QuadraticPenalty(self.anchor, self.precision, "consolidated")

    def value(self, theta) -> float:
        return self.penalty.value(theta)

    def grad(self, theta) -> np.ndarray:
        return self.penalty.grad(theta)


def init_posterior(hyper: Hyperparams, P: int) -> ConsolidatedPosterior:
    """Zero-mean isotropic Gaussian prior expressed as a consolidated penalty."""
    if P < 1:
        raise ValueError("P must be >= 1")
    return ConsolidatedPosterior(np.zeros(P), np.full(P, float(hyper.lambda_prior)),
                                 hyper.lambda_prior)


def consolidate_single(prev: ConsolidatedPosterior, theta_opt, fisher, lam: float,
                       task_id: str = "") -> ConsolidatedPosterior:
    """Fold one finished task into the single penalty.

    The anchor moves to the new optimum and the task's weighted Fisher is
    added to the running precision.
    """
    if not lam > 0:
        raise ValueError(f"task weight must be > 0, got {lam}")
    theta_opt = _vec(theta_opt, "optimum")
    fisher = _vec(fisher, "fisher")
    _same_length(theta_opt, prev.anchor)
    _same_length(fisher, prev.anchor)
    if np.any(fisher < 0):
        raise ValueError("Fisher diagonal must be nonnegative")
    task_id = task_id or f"task{len(prev.task_log)}"
    return ConsolidatedPosterior(theta_opt, prev.precision + lam * fisher,
                                 prev.lambda_prior, prev.task_log + ((task_id, lam),))


@dataclass(frozen=True, eq=False)
class PenaltyBank:
    penalties: tuple[QuadraticPenalty, ...]
    prior_precision: float
    size: int

    def __post_init__(self):
        object.__setattr__(self, "penalties", tuple(self.penalties))
        if self.prior_precision < 0:
            raise ValueError("prior precision must be >= 0")
        labels = self.task_ids
        if len(set(labels)) != len(labels):
            raise StateError(f"duplicate task labels in bank: {labels}")
        for p in self.penalties:
            if p.size != self.size:
                raise DimensionError(f"penalty {p.label!r} has length {p.size}, bank has {self.size}")

    @property
    def task_ids(self) -> list[str]:
        return [p.label for p in self.penalties]

    def __len__(self):
        return len(self.penalties)

    def __getitem__(self, task_id: str) -> QuadraticPenalty:
        for p in self.penalties:
            if p.label == task_id:
                return p
        raise KeyError(task_id)

    @property
    def prior(self) -> QuadraticPenalty:
        return prior_penalty(self.prior_precision, self.size)

    def total_precision(self) -> np.ndarray:
        q = np.full(self.size, float(self.prior_precision))
        for p in self.penalties:
            q = q + p.precision
        return q

    def value(self, theta) -> float:
        return self.prior.value(theta) + sum(p.value(theta) for p in self.penalties)

    def grad(self, theta) -> np.ndarray:
        g = self.prior.grad(theta)
        for p in self.penalties:
            g = g + p.grad(theta)
        return g

    def with_penalty(self, p: QuadraticPenalty) -> "PenaltyBank":
        return PenaltyBank(self.penalties + (p,), self.prior_precision, self.size)


def empty_bank(lambda_prior: float, P: int) -> PenaltyBank:
    return PenaltyBank((), float(lambda_prior), P)


def ewc_multi_penalty(history: Sequence[tuple], lambda_prior: float) -> PenaltyBank:
    """One penalty per past task, centred at that task's own optimum.

    ``history`` holds ``(theta_opt, fisher, lam)`` or ``(theta_opt, fisher,
    lam, task_id)`` tuples in task order.
    """
    if not history:
        raise ValueError("history must contain at least one task")
    penalties = []
    for i, rec in enumerate(history):
        theta_opt, fisher, lam = rec[:3]
        label = rec[3] if len(rec) > 3 else f"task{i}"
        penalties.append(QuadraticPenalty(theta_opt, lam * np.asarray(fisher, dtype=float), label))
    return PenaltyBank(tuple(penalties), float(lambda_prior), penalties[0].size)


def debiased_center(prev_bank: PenaltyBank, consolidated: ConsolidatedPosterior | None,
                    theta_opt, fisher, lam: float, task_id: str = "",
                    floor: float = DEFAULT_FLOOR, denominator: str = "weighted",
                    ) -> QuadraticPenalty:
    """Per-task penalty whose centre keeps the bank's gradient equal to the single penalty's.

    ``consolidated`` is the single-penalty state *before* this task (it must
    list the same tasks as ``prev_bank``); pass None to derive the previous
    precision from the bank alone. Coordinates whose weighted Fisher is below
    ``floor`` get the optimum itself as their centre.

    ``denominator="fisher"`` divides by the unweighted Fisher instead of
    ``lam * fisher``. It breaks the gradient identity whenever ``lam != 1`` and
    exists only as a fault-injection hook for the self-test.
    """
    if not lam > 0:
        raise ValueError(f"task weight must be > 0, got {lam}")
    if denominator not in ("weighted", "fisher"):
        raise ValueError(f"unknown denominator mode {denominator!r}")
    theta_opt = _vec(theta_opt, "optimum")
    fisher = _vec(fisher, "fisher")
    _same_length(theta_opt, fisher)
    if theta_opt.shape[0] != prev_bank.size:
        raise DimensionError("optimum length does not match the bank")

    prev_precision = prev_bank.total_precision()
    if consolidated is not None:
        if consolidated.task_ids != prev_bank.task_ids:
            raise StateError(f"bank tasks {prev_bank.task_ids} do not match "
                             f"consolidated tasks {consolidated.task_ids}")
        _check_precision(consolidated.precision, prev_precision)

    weighted = lam * fisher
    total = prev_precision + weighted
    pulled = np.zeros_like(theta_opt)
    for p in prev_bank.penalties:
        pulled += p.precision * p.center
    numer = total * theta_opt - pulled

    denom = weighted if denominator == "weighted" else fisher
    ok = weighted >= floor
    center = theta_opt.copy()
    center[ok] = numer[ok] / denom[ok]
    return QuadraticPenalty(center, weighted, task_id or f"task{len(prev_bank)}")


def degenerate_coordinates(fisher, lam: float, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    return np.flatnonzero(lam * np.asarray(fisher) < floor)


def _check_precision(expected, got, tol=1e-10):
    scale = max(1.0, float(np.max(np.abs(expected))))
    err = float(np.max(np.abs(expected - got)))
    if err > tol * scale:
        raise StateError(f"precision mismatch of {err:.3g} between bank and consolidated state")


def decompose(consolidated: ConsolidatedPosterior, per_task: Sequence[tuple]) -> PenaltyBank:
    """Build the per-task bank from ``(fisher, lam, center)`` records in task-log order."""
    if len(per_task) != len(consolidated.task_log):
        raise StateError(f"{len(per_task)} per-task records for "
                         f"{len(consolidated.task_log)} consolidated tasks")
    penalties = []
    for (task_id, _), (fisher, lam, center) in zip(consolidated.task_log, per_task):
        penalties.append(QuadraticPenalty(center, lam * np.asarray(fisher, dtype=float), task_id))
    bank = PenaltyBank(tuple(penalties), consolidated.lambda_prior, consolidated.size)
    _check_precision(consolidated.precision, bank.total_precision())
    return bank


def drop_penalty(bank: PenaltyBank, task_id: str) -> PenaltyBank:
    if task_id not in bank.task_ids:
        raise ValueError(f"task {task_id!r} not in bank {bank.task_ids}")
    return PenaltyBank(tuple(p for p in bank.penalties if p.label != task_id),
                       bank.prior_precision, bank.size)


def add_penalty(bank: PenaltyBank, p: QuadraticPenalty) -> PenaltyBank:
    return bank.with_penalty(p)
