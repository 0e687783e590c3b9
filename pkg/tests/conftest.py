import math

import numpy as np
import pytest

from ewc_laplace.net import Architecture, TaskDataset


def central_diff(f, x, h=1e-5):
    """Plain central-difference gradient, kept separate from the package's helpers."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


def slow_forward(arch, params, X):
    """Neuron-by-neuron evaluation that reads weights straight from the flat vector."""
    params = list(map(float, params))
    outputs = []
    for row in X:
        a = [float(v) for v in row]
        pos = 0
        n_layers = len(arch.layer_sizes) - 1
        for l in range(n_layers):
            fi, fo = arch.layer_sizes[l], arch.layer_sizes[l + 1]
            W = params[pos:pos + fi * fo]
            pos += fi * fo
            if arch.bias:
                b = params[pos:pos + fo]
                pos += fo
            else:
                b = [0.0] * fo
            z = []
            for j in range(fo):
                s = b[j]
                for i in range(fi):
                    s += W[j * fi + i] * a[i]
                z.append(s)
            if l < n_layers - 1 and arch.activation == "tanh":
                z = [math.tanh(v) for v in z]
            a = z
        if arch.head == "categorical":
            m = max(a)
            e = [math.exp(v - m) for v in a]
            a = [v / sum(e) for v in e]
        outputs.append(a)
    return np.array(outputs)


def random_problem(rng, head, sizes=(3, 5, 2), activation="tanh", n=7, bias=True):
    arch = Architecture(sizes, activation, head, noise_variance=0.6, bias=bias)
    X = rng.standard_normal((n, sizes[0]))
    if head == "categorical":
        y = rng.integers(0, sizes[-1], size=n)
    else:
        y = rng.standard_normal((n, sizes[-1]))
    theta = 0.7 * rng.standard_normal(arch.n_params)
    return arch, theta, TaskDataset(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear_arch():
    return Architecture((16, 1), "identity", "gaussian", 1.0, bias=False)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
