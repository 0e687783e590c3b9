"""Small fully connected network with hand-written backpropagation.

Parameters live in one flat vector. The flattening order is fixed: layer by
layer, each layer's weight matrix of shape ``(fan_out, fan_in)`` in row-major
order, followed by that layer's bias vector (when biases are enabled).

Hidden layers apply the configured activation; the last layer is affine and
feeds one of two likelihood heads:

* ``gaussian``: outputs are predictive means, observation noise has fixed
  variance ``noise_variance``.
* ``categorical``: outputs are logits turned into class probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "identity")
HEADS = ("gaussian", "categorical")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DimensionError(ValueError):
    """Raised when array shapes disagree with the architecture."""


class NumericError(ArithmeticError):
    """Raised when a non-finite value shows up in a likelihood computation."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Architecture:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    head: str = "gaussian"
    noise_variance: float = 1.0
    bias: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if self.head == "categorical" and sizes[-1] < 2:
            raise ValueError("categorical head needs at least 2 outputs")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(fo * fi + (fo if self.bias else 0)
                   for fi, fo in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def unflatten(self, params) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Split a flat vector into ``[(W, b), ...]`` views (``b`` is None without biases)."""
        params = check_params(self, params)
        layers = []
        pos = 0
        for fi, fo in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = params[pos:pos + fo * fi].reshape(fo, fi)
            pos += fo * fi
            b = None
            if self.bias:
                b = params[pos:pos + fo]
                pos += fo
            layers.append((W, b))
        return layers

    def init_params(self, seed: int) -> np.ndarray:
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases included."""
        rng = np.random.default_rng(seed)
        chunks = []
        for fi, fo in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            r = 1.0 / math.sqrt(fi)
            chunks.append(rng.uniform(-r, r, size=fo * fi))
            if self.bias:
                chunks.append(rng.uniform(-r, r, size=fo))
        return np.concatenate(chunks)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "head": self.head,
            "noise_variance": self.noise_variance,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(layer_sizes=tuple(d["layer_sizes"]),
                   activation=d.get("activation", "tanh"),
                   head=d.get("head", "gaussian"),
                   noise_variance=float(d.get("noise_variance", 1.0)),
                   bias=bool(d.get("bias", True)))


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Inputs and targets of one task.

    Regression targets are an ``(N, K)`` float matrix (a length-N vector is
    promoted to ``(N, 1)``); classification targets are a length-N vector of
    class indices.
    """

    inputs: np.ndarray
    targets: np.ndarray
    task_id: str = ""

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"inputs must be 2-D, got shape {X.shape}")
        y = np.asarray(self.targets)
        if y.ndim == 1 and y.dtype.kind == "f":
            y = y.reshape(-1, 1)
        if y.shape[0] != X.shape[0]:
            raise DimensionError(
                f"{X.shape[0]} input rows but {y.shape[0]} targets")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def sample_count(self) -> int:
        return self.inputs.shape[0]

    def __len__(self):
        return self.sample_count

    @property
    def is_classification(self) -> bool:
        return self.targets.ndim == 1

    def subset(self, idx) -> "TaskDataset":
        return TaskDataset(self.inputs[idx], self.targets[idx], self.task_id)


def concat(datasets: Sequence[TaskDataset], task_id: str = "joint") -> TaskDataset:
    return TaskDataset(np.concatenate([d.inputs for d in datasets]),
                       np.concatenate([d.targets for d in datasets]),
                       task_id)


def check_params(arch: Architecture, params) -> np.ndarray:
    theta = np.asarray(params, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != arch.n_params:
        raise DimensionError(
            f"parameter vector has shape {theta.shape}, expected ({arch.n_params},)")
    if not np.all(np.isfinite(theta)):
        raise NumericError("parameter vector contains non-finite entries")
    return theta


def _check_inputs(arch: Architecture, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise DimensionError(
            f"inputs have shape {X.shape}, expected (N, {arch.input_dim})")
    return X


def _check_data(arch: Architecture, data: TaskDataset) -> None:
    _check_inputs(arch, data.inputs)
    if arch.head == "categorical":
        if not data.is_classification:
            raise DimensionError("categorical head needs a vector of class indices")
        t = data.targets
        if t.dtype.kind not in "iu" or t.min() < 0 or t.max() >= arch.output_dim:
            raise DimensionError(
                f"class indices must be integers in [0, {arch.output_dim})")
    else:
        if data.is_classification or data.targets.shape[1] != arch.output_dim:
            raise DimensionError(
                f"regression targets have shape {data.targets.shape}, "
                f"expected (N, {arch.output_dim})")


def _act(name, z):
    return np.tanh(z) if name == "tanh" else z


def _forward_pass(arch: Architecture, params, X):
    """Return (layers, activations); activations[0] is X, activations[-1] the raw output."""
    layers = arch.unflatten(params)
    acts = [X]
    a = X
    for l, (W, b) in enumerate(layers):
        z = a @ W.T
        if b is not None:
            z = z + b
        a = z if l == len(layers) - 1 else _act(arch.activation, z)
        acts.append(a)
    return layers, acts


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def forward(arch: Architecture, params, inputs) -> np.ndarray:
    """Predicted means (gaussian head) or class probabilities (categorical head)."""
    X = _check_inputs(arch, inputs)
    _, acts = _forward_pass(arch, params, X)
    out = acts[-1]
    if arch.head == "categorical":
        return np.exp(_log_softmax(out))
    return out


def per_example_nll(arch: Architecture, params, data: TaskDataset) -> np.ndarray:
    _check_data(arch, data)
    # overflow is reported below as NumericError
    with np.errstate(over="ignore", invalid="ignore"):
        _, acts = _forward_pass(arch, params, data.inputs)
        out = acts[-1]
        if arch.head == "categorical":
            logp = _log_softmax(out)
            losses = -logp[np.arange(len(data)), data.targets]
        else:
            var = arch.noise_variance
            r = out - data.targets
            losses = (0.5 * (r * r).sum(axis=1) / var
                      + out.shape[1] * (_HALF_LOG_2PI + 0.5 * math.log(var)))
    _raise_nonfinite(losses, "negative log-likelihood")
    return losses


def neg_log_likelihood(arch: Architecture, params, data: TaskDataset) -> float:
    """Exact negative log-likelihood of the whole dataset (Gaussian normaliser included)."""
    return float(per_example_nll(arch, params, data).sum())


def _raise_nonfinite(values, what):
    bad = ~np.isfinite(values)
    if bad.any():
        n = int(np.flatnonzero(bad.reshape(len(values), -1).any(axis=1))[0])
        raise NumericError(f"non-finite {what} at example {n}", index=n)


def output_delta(arch: Architecture, out: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Derivative of each example's NLL with respect to the raw network output."""
    if arch.head == "categorical":
        delta = np.exp(_log_softmax(out))
        delta[np.arange(len(targets)), targets] -= 1.0
        return delta
    return (out - targets) / arch.noise_variance


def _backprop(arch, layers, acts, delta, per_example):
    """Push ``delta`` (dL/d raw output, N x K) back through the layers.

    Returns an (N, P) array of per-example gradients when ``per_example`` is
    set, else the summed (P,) gradient.
    """
    N = delta.shape[0]
    grads = []
    for l in range(len(layers) - 1, -1, -1):
        W, b = layers[l]
        a_in = acts[l]
        if per_example:
            gW = (delta[:, :, None] * a_in[:, None, :]).reshape(N, -1)
            gb = delta
        else:
            gW = (delta.T @ a_in).ravel()
            gb = delta.sum(axis=0)
        grads.append((gW, gb if b is not None else None))
        if l > 0:
            delta = delta @ W
            if arch.activation == "tanh":
                delta = delta * (1.0 - acts[l] ** 2)
    axis = 1 if per_example else 0
    parts = []
    for gW, gb in reversed(grads):
        parts.append(gW)
        if gb is not None:
            parts.append(gb)
    return np.concatenate(parts, axis=axis)


def grad_nll(arch: Architecture, params, data: TaskDataset) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood` with respect to the flat parameters."""
    _check_data(arch, data)
    layers, acts = _forward_pass(arch, params, data.inputs)
    delta = output_delta(arch, acts[-1], data.targets)
    _raise_nonfinite(delta, "output gradient")
    return _backprop(arch, layers, acts, delta, per_example=False)


def per_example_grads(arch: Architecture, params, data: TaskDataset) -> np.ndarray:
    """(N, P) array; row n is the gradient of example n's negative log-likelihood."""
    _check_data(arch, data)
    layers, acts = _forward_pass(arch, params, data.inputs)
    delta = output_delta(arch, acts[-1], data.targets)
    _raise_nonfinite(delta, "output gradient")
    return _backprop(arch, layers, acts, delta, per_example=True)


def output_jacobian_grads(arch: Architecture, params, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Per-example gradients of each raw output unit.

    Returns ``(out, J)`` with ``J`` of shape (K, N, P): ``J[k, n]`` is the
    gradient of output unit k for example n.
    """
    X = _check_inputs(arch, inputs)
    layers, acts = _forward_pass(arch, params, X)
    out = acts[-1]
    N, K = out.shape
    J = np.empty((K, N, arch.n_params))
    for k in range(K):
        delta = np.zeros((N, K))
        delta[:, k] = 1.0
        J[k] = _backprop(arch, layers, acts, delta, per_example=True)
    return out, J
