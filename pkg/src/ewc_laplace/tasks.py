"""Deterministic synthetic task sequences.

Every random draw goes through ``numpy.random.default_rng(seed)``, i.e. the
PCG64 bit generator seeded through SeedSequence, so a (spec, seed) pair
always produces the same dataset bit for bit.

Kinds
-----
``diag_linear_gaussian``
    One-hot inputs cycling over the task's informative coordinates. Targets
    are the task weight at that coordinate plus noise. The noise uses exact
    moments: within each coordinate the rows are paired and get ``+sigma`` /
    ``-sigma`` in a seeded order (an odd leftover row gets a Gaussian draw).
    At the per-coordinate least-squares fit every residual then has squared
    size ``sigma**2``, so the empirical Fisher equals the exact curvature.
``linear_gaussian``
    Standard-normal inputs, weights supported on the informative
    coordinates, Gaussian noise.
``permuted_features_classification``
    Two Gaussian blobs with balanced labels whose means differ by
    ``separation`` along a direction supported on ``n_informative``
    coordinates. Informative coordinates have unit noise, the others noise
    of standard deviation ``background_scale`` (a low value mimics the
    near-constant border pixels of image benchmarks). The blobs are drawn from ``base_seed`` and therefore shared
    by the whole sequence. Each task permutes a
    ``1 - overlap`` fraction of the input coordinates with a permutation
    drawn from its own ``seed``.

Informative coordinates of the linear kinds form a window of
``n_informative`` consecutive coordinates (mod ``input_dim``) starting at
``position * round((1 - overlap) * n_informative)``, so consecutive tasks
share an ``overlap`` fraction of them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .net import TaskDataset

KINDS = ("diag_linear_gaussian", "linear_gaussian", "permuted_features_classification")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n_samples: int = 64
    input_dim: int = 16
    seed: int = 0
    overlap: float = 1.0
    noise_variance: float = 1.0
    task_id: str = ""
    n_informative: int | None = None
    position: int = 0
    weight_scale: float = 1.0
    target_offset: float = 0.0
    base_seed: int = 0
    separation: float = 3.0
    background_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        k = self.informative_count
        if not self.background_scale >= 0:
            raise ValueError("background_scale must be >= 0")
        if not 1 <= k <= self.input_dim:
            raise ValueError("n_informative must lie in [1, input_dim]")

    @property
    def informative_count(self) -> int:
        return self.input_dim if self.n_informative is None else int(self.n_informative)

    @property
    def label(self) -> str:
        return self.task_id or f"task{self.position}"

    def informative_coords(self) -> np.ndarray:
        k = self.informative_count
        shift = int(round((1.0 - self.overlap) * k))
        start = self.position * shift
        return (start + np.arange(k)) % self.input_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def generate(spec: TaskSpec, prev: TaskSpec | None = None) -> TaskDataset:
    if prev is not None and prev.input_dim != spec.input_dim:
        raise ValueError(f"task {spec.label!r} has input_dim {spec.input_dim}, "
                         f"previous task has {prev.input_dim}")
    if spec.kind == "diag_linear_gaussian":
        return _diag_linear(spec)
    if spec.kind == "linear_gaussian":
        return _linear(spec)
    return _permuted_classification(spec)


def generate_sequence(specs: Sequence[TaskSpec]) -> list[TaskDataset]:
    """Generate a whole sequence, numbering positions in order."""
    out = []
    prev = None
    for i, spec in enumerate(positioned(specs)):
        out.append(generate(spec, prev))
        prev = spec
    return out


def positioned(specs: Sequence[TaskSpec]) -> list[TaskSpec]:
    specs = [dataclasses.replace(s, position=i) for i, s in enumerate(specs)]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate task ids in sequence: {labels}")
    return specs


def _task_weights(spec: TaskSpec, rng) -> np.ndarray:
    w = np.zeros(spec.input_dim)
    coords = spec.informative_coords()
    w[coords] = spec.weight_scale * rng.standard_normal(coords.size) + spec.target_offset
    return w


def _diag_linear(spec: TaskSpec) -> TaskDataset:
    rng = np.random.default_rng(spec.seed)
    w = _task_weights(spec, rng)
    coords = spec.informative_coords()
    which = coords[np.arange(spec.n_samples) % coords.size]
    X = np.zeros((spec.n_samples, spec.input_dim))
    X[np.arange(spec.n_samples), which] = 1.0

    sigma = np.sqrt(spec.noise_variance)
    noise = np.empty(spec.n_samples)
    for c in coords:
        rows = np.flatnonzero(which == c)
        if rows.size == 0:
            continue
        rows = rows[rng.permutation(rows.size)]
        m = rows.size
        signs = np.tile([1.0, -1.0], m // 2)
        noise[rows[:2 * (m // 2)]] = sigma * signs
        if m % 2:
            noise[rows[-1]] = sigma * rng.standard_normal()
    y = w[which] + noise
    return TaskDataset(X, y.reshape(-1, 1), spec.label)


def _linear(spec: TaskSpec) -> TaskDataset:
    rng = np.random.default_rng(spec.seed)
    w = _task_weights(spec, rng)
    X = rng.standard_normal((spec.n_samples, spec.input_dim))
    y = X @ w + np.sqrt(spec.noise_variance) * rng.standard_normal(spec.n_samples)
    return TaskDataset(X, y.reshape(-1, 1), spec.label)


def _permuted_classification(spec: TaskSpec) -> TaskDataset:
    base = np.random.default_rng(spec.base_seed)
    d = spec.input_dim
    k = spec.informative_count
    direction = np.zeros(d)
    support = base.choice(d, size=k, replace=False)
    direction[support] = base.choice([-1.0, 1.0], size=k) / np.sqrt(k)
    mu = 0.5 * spec.separation * direction
    labels = np.arange(spec.n_samples) % 2
    labels = labels[base.permutation(spec.n_samples)]
    scale = np.full(d, float(spec.background_scale))
    scale[support] = 1.0
    X = np.where(labels[:, None] == 1, mu, -mu) + scale * base.standard_normal((spec.n_samples, d))

    rng = np.random.default_rng(spec.seed)
    n_moved = int(round((1.0 - spec.overlap) * d))
    perm = np.arange(d)
    if n_moved > 1:
        moved = np.sort(rng.choice(d, size=n_moved, replace=False))
        perm[moved] = moved[rng.permutation(n_moved)]
    return TaskDataset(X[:, perm], labels.astype(np.int64), spec.label)
