import json

import numpy as np
import pytest

from ewc_laplace import consolidate as cons
from ewc_laplace import serialize
from ewc_laplace.net import Architecture


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    arch = Architecture((3, 4, 2), "tanh", "categorical")
    theta = rng.standard_normal(arch.n_params) * 1e-7 + np.pi
    path = serialize.save_checkpoint(tmp_path / "ck.json", arch, theta)
    arch2, theta2 = serialize.load_checkpoint(path)
    assert arch2 == arch
    np.testing.assert_array_equal(theta2, theta)
    text = path.read_text()
    assert text.endswith("\n") and "\r" not in text


def test_checkpoint_rejects_wrong_schema_or_size():
    arch = Architecture((2, 1), "identity", "gaussian")
    d = serialize.checkpoint_to_dict(arch, np.zeros(3))
    with pytest.raises(serialize.SchemaError):
        serialize.checkpoint_from_dict({**d, "version": 99})
    with pytest.raises(serialize.SchemaError):
        serialize.checkpoint_from_dict({**d, "params": [0.0]})
    with pytest.raises(serialize.SchemaError):
        serialize.posterior_from_dict(d)


def test_posterior_and_bank_round_trip(rng):
    post = cons.consolidate_single(cons.init_posterior(cons.Hyperparams(0.1), 4),
                                   rng.standard_normal(4), rng.uniform(size=4), 3.0, "A")
    back = serialize.posterior_from_dict(json.loads(serialize.dumps(serialize.posterior_to_dict(post))))
    np.testing.assert_array_equal(back.anchor, post.anchor)
    np.testing.assert_array_equal(back.precision, post.precision)
    assert back.task_log == post.task_log
    bank = cons.empty_bank(0.1, 4).with_penalty(cons.QuadraticPenalty(rng.standard_normal(4), np.ones(4), "A"))
    bank2 = serialize.bank_from_dict(json.loads(serialize.dumps(serialize.bank_to_dict(bank))))
    assert bank2.task_ids == ["A"]
    np.testing.assert_array_equal(bank2["A"].center, bank["A"].center)


def test_nan_is_not_serialised():
    with pytest.raises(ValueError):
        serialize.dumps({"x": float("nan")})


def test_state_bytes_sizes(rng):
    post = cons.init_posterior(cons.Hyperparams(1.0), 8)
    bank = cons.empty_bank(1.0, 8)
    sizes_post, sizes_bank = [], []
    for t in range(4):
        th, F = rng.standard_normal(8) * 10 ** t, rng.uniform(size=8)
        post = cons.consolidate_single(post, th, F, 64.0, f"t{t}")
        bank = bank.with_penalty(cons.QuadraticPenalty(th, F, f"t{t}"))
        sizes_post.append(len(serialize.posterior_state_bytes(post)))
        sizes_bank.append(len(serialize.bank_state_bytes(bank)))
    assert len(set(sizes_post)) == 1
    steps = np.diff(sizes_bank)
    assert np.all(steps > 0) and len(set(steps)) == 1
