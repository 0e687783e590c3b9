"""JSON (de)serialisation for checkpoints, penalty states and reports.

Documents are written with sorted keys, two-space indentation and a
trailing newline; floats use Python's shortest round-trip repr, so a value
read back is bit-identical to the one written.

``*_state_bytes`` produce a schema-normalised encoding used to compare
storage footprints: only the numbers needed to resume training are kept and
every float is written with the fixed-width ``%+.17e`` format.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .consolidate import ConsolidatedPosterior, PenaltyBank, QuadraticPenalty
from .net import Architecture

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _check(d: dict, schema: str):
    if d.get("schema") != schema:
        raise SchemaError(f"expected schema {schema!r}, got {d.get('schema')!r}")
    if d.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported {schema} version {d.get('version')!r}")


def checkpoint_to_dict(arch: Architecture, params) -> dict:
    return {"schema": "checkpoint", "version": SCHEMA_VERSION,
            "architecture": arch.to_dict(), "params": _floats(params)}


def checkpoint_from_dict(d: dict) -> tuple[Architecture, np.ndarray]:
    _check(d, "checkpoint")
    arch = Architecture.from_dict(d["architecture"])
    params = np.array(d["params"], dtype=float)
    if params.shape != (arch.n_params,):
        raise SchemaError(f"checkpoint holds {params.size} parameters, "
                          f"architecture needs {arch.n_params}")
    return arch, params


def save_checkpoint(path, arch: Architecture, params) -> Path:
    return write_json(checkpoint_to_dict(arch, params), path)


def load_checkpoint(path) -> tuple[Architecture, np.ndarray]:
    return checkpoint_from_dict(read_json(path))


def posterior_to_dict(post: ConsolidatedPosterior) -> dict:
    return {"schema": "consolidated_posterior", "version": SCHEMA_VERSION,
            "anchor": _floats(post.anchor), "precision": _floats(post.precision),
            "lambda_prior": float(post.lambda_prior),
            "task_log": [[t, lam] for t, lam in post.task_log]}


def posterior_from_dict(d: dict) -> ConsolidatedPosterior:
    _check(d, "consolidated_posterior")
    return ConsolidatedPosterior(np.array(d["anchor"], dtype=float),
                                 np.array(d["precision"], dtype=float),
                                 float(d["lambda_prior"]),
                                 tuple((t, lam) for t, lam in d["task_log"]))


def _penalty_dict(p: QuadraticPenalty) -> dict:
    return {"label": p.label, "center": _floats(p.center), "precision": _floats(p.precision)}


def bank_to_dict(bank: PenaltyBank) -> dict:
    return {"schema": "penalty_bank", "version": SCHEMA_VERSION,
            "size": bank.size, "prior_precision": float(bank.prior_precision),
            "penalties": [_penalty_dict(p) for p in bank.penalties]}


def bank_from_dict(d: dict) -> PenaltyBank:
    _check(d, "penalty_bank")
    pens = tuple(QuadraticPenalty(np.array(p["center"], dtype=float),
                                  np.array(p["precision"], dtype=float), p["label"])
                 for p in d["penalties"])
    return PenaltyBank(pens, float(d["prior_precision"]), int(d["size"]))


def _fixed(a) -> list[str]:
    return ["%+.17e" % x for x in _floats(a)]


def posterior_state_bytes(post: ConsolidatedPosterior) -> bytes:
    # the task log is provenance, not state needed to keep training
    doc = {"schema": "consolidated_posterior", "version": SCHEMA_VERSION,
           "anchor": _fixed(post.anchor), "precision": _fixed(post.precision),
           "lambda_prior": "%+.17e" % post.lambda_prior}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def bank_state_bytes(bank: PenaltyBank) -> bytes:
    doc = {"schema": "penalty_bank", "version": SCHEMA_VERSION,
           "prior_precision": "%+.17e" % bank.prior_precision,
           "penalties": [{"center": _fixed(p.center), "precision": _fixed(p.precision)}
                         for p in bank.penalties]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
