"""Experiment configuration files (JSON, versioned schema).

Every key is validated before any computation starts and unknown keys are
rejected. Problems are collected into a :class:`ConfigError` whose message
names each offending field, e.g. ``tasks[1].overlap: 1.5 is greater than
the maximum of 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .consolidate import Hyperparams
from .fisher import FISHER_MODES
from .net import ACTIVATIONS, HEADS, Architecture
from .tasks import KINDS, TaskSpec
from .trainer import METHODS, STRATEGIES, OptimizerConfig

CONFIG_VERSION = 1
REPORT_FORMAT_VERSION = 1

_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}
_pos = {"type": "number", "exclusiveMinimum": 0}

_task_schema = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "task_id": {"type": "string"},
        "n_samples": _pos_int,
        "input_dim": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "overlap": {"type": "number", "minimum": 0, "maximum": 1},
        "noise_variance": _pos,
        "n_informative": _pos_int,
        "weight_scale": {"type": "number"},
        "target_offset": {"type": "number"},
        "base_seed": {"type": "integer", "minimum": 0},
        "separation": _nonneg,
        "background_scale": _nonneg,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "network", "tasks", "strategies"],
    "properties": {
        "schema_version": {"const": CONFIG_VERSION},
        "report_format_version": {"const": REPORT_FORMAT_VERSION},
        "name": {"type": "string"},
        "output": {"type": "string"},
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["layer_sizes"],
            "properties": {
                "layer_sizes": {"type": "array", "items": _pos_int, "minItems": 2},
                "activation": {"enum": list(ACTIVATIONS)},
                "head": {"enum": list(HEADS)},
                "noise_variance": _pos,
                "bias": {"type": "boolean"},
                "init_seed": {"type": "integer", "minimum": 0},
            },
        },
        "tasks": {"type": "array", "items": _task_schema, "minItems": 1},
        "strategies": {"type": "array", "items": {"enum": list(STRATEGIES)},
                       "minItems": 1, "uniqueItems": True},
        "hyper": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_prior": _nonneg,
                "lambda_per_task": {"type": "object", "additionalProperties": _pos},
                "fisher_mode": {"enum": list(FISHER_MODES)},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "learning_rate": _pos,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "max_steps": _pos_int,
                "grad_tol": _pos,
                "seed": {"type": "integer", "minimum": 0},
                "batch_size": {"oneOf": [_pos_int, {"type": "null"}]},
                "line_search": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str], source: str = "config"):
        self.problems = problems
        super().__init__(f"{source}: invalid configuration\n" + "\n".join(f"  {p}" for p in problems))


@dataclass
class ExperimentConfig:
    name: str
    arch: Architecture
    init_seed: int
    tasks: list[TaskSpec]
    strategies: list[str]
    hyper: Hyperparams
    optimizer: OptimizerConfig
    output: str = "reports"
    raw: dict = field(default_factory=dict, repr=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Replace the network-init and optimizer seeds (task data seeds are kept)."""
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("network", {})["init_seed"] = seed
        raw.setdefault("optimizer", {})["seed"] = seed
        return from_dict(raw)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def from_dict(raw: dict, source: str = "config") -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([f"{_path(e.absolute_path)}: {e.message}" for e in errors], source)

    problems = []
    net = raw["network"]
    try:
        arch = Architecture.from_dict(net)
    except ValueError as exc:
        problems.append(f"network: {exc}")
        arch = None

    tasks = []
    for i, t in enumerate(raw["tasks"]):
        try:
            tasks.append(TaskSpec(**t))
        except ValueError as exc:
            problems.append(f"tasks[{i}]: {exc}")
    if arch is not None:
        for i, t in enumerate(tasks):
            if t.input_dim != arch.input_dim:
                problems.append(f"tasks[{i}].input_dim: {t.input_dim} does not match "
                                f"network.layer_sizes[0] = {arch.input_dim}")
            is_cls = t.kind == "permuted_features_classification"
            if is_cls != (arch.head == "categorical"):
                problems.append(f"tasks[{i}].kind: {t.kind!r} does not fit the {arch.head} head")
    ids = [t.task_id or f"task{i}" for i, t in enumerate(tasks)]
    if len(set(ids)) != len(ids):
        problems.append(f"tasks: duplicate task ids {ids}")

    hyper_raw = raw.get("hyper", {})
    unknown = sorted(set(hyper_raw.get("lambda_per_task", {})) - set(ids))
    if unknown:
        problems.append(f"hyper.lambda_per_task: unknown task ids {unknown}")
    try:
        hyper = Hyperparams(**hyper_raw)
    except ValueError as exc:
        problems.append(f"hyper: {exc}")
    try:
        optimizer = OptimizerConfig(**raw.get("optimizer", {}))
    except ValueError as exc:
        problems.append(f"optimizer: {exc}")
    if problems:
        raise ConfigError(problems, source)

    return ExperimentConfig(name=raw.get("name", "experiment"), arch=arch,
                            init_seed=int(net.get("init_seed", 0)), tasks=tasks,
                            strategies=list(raw["strategies"]), hyper=hyper,
                            optimizer=optimizer, output=raw.get("output", "reports"),
                            raw=raw)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read file: {exc.strerror}"], str(path)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], str(path)) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: top level must be an object"], str(path))
    return from_dict(raw, str(path))
