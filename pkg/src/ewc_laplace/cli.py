"""Command-line entry point.

    ewc-laplace run CONFIG [--out-dir DIR] [--seed-override N]
    ewc-laplace verify [--fault printed-denominator]
    ewc-laplace export REPORT --format {csv,structured} [--out-dir DIR]

Exit codes: 0 success, 1 verification failure or unexpected error,
2 invalid config or missing report, 3 training divergence.
Log verbosity comes from the ``EWC_LAPLACE_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import serialize, verify
from .trainer import TrainingError, run_sequence

log = logging.getLogger("ewc_laplace")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _setup_logging():
    level = os.environ.get("EWC_LAPLACE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def summarize(reports) -> dict:
    out = {"schema": "comparison_summary", "version": serialize.SCHEMA_VERSION, "strategies": {}}
    for r in reports:
        final = [row[-1] for row in r.loss_matrix]
        entry = {
            "final_losses": dict(zip(r.task_ids, final)),
            "final_average_loss": sum(final) / len(final),
            "all_converged": all(r.converged),
        }
        if r.oracle_distance is not None:
            entry["oracle_mean_distance"] = r.oracle_distance[-1]
        out["strategies"][r.strategy] = entry
    return out


def cmd_run(args) -> int:
    try:
        cfg = cfgmod.load(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out_dir or cfg.output)
    reports, timings = [], {}
    for strategy in cfg.strategies:
        try:
            rep = run_sequence(cfg.tasks, strategy, cfg.hyper, cfg.optimizer, cfg.arch,
                               init_seed=cfg.init_seed)
        except TrainingError as exc:
            print(f"{strategy}: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        doc = rep.to_dict()
        doc["config"] = {"experiment": cfg.raw, "resolved": doc["config"]}
        serialize.write_json(doc, out_dir / f"{strategy}.report.json")
        timings[strategy] = rep.wall_clock
        reports.append(rep)
        log.info("wrote %s", out_dir / f"{strategy}.report.json")
    summary = summarize(reports)
    summary["experiment"] = cfg.name
    serialize.write_json(summary, out_dir / "summary.json")
    # wall-clock numbers differ between runs, so they stay out of the reports
    serialize.write_json({"wall_clock_seconds": timings}, out_dir / "timings.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    failed = verify.run(args.fault)
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_FAIL
    print("all checks passed")
    return EXIT_OK


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_matrix_csv(path, task_ids, matrix) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task"] + [f"after_{t}" for t in task_ids])
        for tid, row in zip(task_ids, matrix):
            w.writerow([tid] + [_fmt(v) for v in row])
    return Path(path)


def read_matrix_csv(path) -> tuple[list[str], list[list[float | None]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    ids = [r[0] for r in rows[1:]]
    return ids, [[float(v) if v else None for v in r[1:]] for r in rows[1:]]


def cmd_export(args) -> int:
    path = Path(args.report)
    try:
        doc = serialize.read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{path}: cannot read report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if doc.get("schema") != "run_report":
        print(f"{path}: not a run report", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out_dir) if args.out_dir else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = path.name.removesuffix(".json").removesuffix(".report")
    if args.format == "csv":
        written = [write_matrix_csv(out_dir / f"{stem}.loss.csv", doc["task_ids"], doc["loss_matrix"]),
                   write_matrix_csv(out_dir / f"{stem}.proxy.csv", doc["task_ids"], doc["proxy_matrix"])]
    else:
        written = [serialize.write_json(doc, out_dir / f"{stem}.export.json")]
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewc-laplace",
                                     description="Sequential Laplace/EWC consolidation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every strategy listed in a config")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.add_argument("--seed-override", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--fault", choices=verify.FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="export a report as CSV or structured JSON")
    p.add_argument("report")
    p.add_argument("--format", choices=("csv", "structured"), default="csv")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        log.exception("unexpected error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
