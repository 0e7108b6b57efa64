"""Command-line front end: run, compare, diagnose, sweep.

Failures print a machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys

from .diagnostics import (
    BoundParams,
    alpha_ratio_envelope,
    default_equivalence_constants,
    h_bounds_check,
    noise_range_estimate,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    build_task,
    compare_runs,
    parse_config,
    read_metrics,
    run_experiment,
    _write_text_atomic,
)
from .tasks import NoiseProfile

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    # Global flags accepted before or after the subcommand. SUPPRESS keeps a
    # subparser from overwriting a value the top-level parser already set.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed-override", type=str, default=argparse.SUPPRESS,
                        help="comma-separated seeds replacing the config's list")
    common.add_argument("--out", type=str, default=argparse.SUPPRESS,
                        help="override the config's output_path")

    parser = argparse.ArgumentParser(prog="lanton", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a config", parents=[common])
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--workers", type=int, default=1,
                     help="seeds executed in parallel (results do not depend on this)")

    cmp_ = sub.add_parser("compare", help="compare finished run directories", parents=[common])
    cmp_.add_argument("dirs", nargs="+", help="run directories")
    cmp_.add_argument("--threshold", type=float, required=True)
    cmp_.add_argument("--raw-crossing", action="store_true",
                      help="use raw losses instead of the trailing-mean smoothing")

    diag = sub.add_parser("diagnose", help="tracker and ratio bound reports for a run directory",
                          parents=[common])
    diag.add_argument("dir")
    diag.add_argument("--delta", type=float, default=0.05)

    sweep = sub.add_parser("sweep", help="run a config over a parameter grid", parents=[common])
    sweep.add_argument("config")
    sweep.add_argument("--grid", required=True,
                       help="JSON file mapping dotted config paths to value lists")
    sweep.add_argument("--workers", type=int, default=1)
    return parser


def _load_config(path: str, args) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        cfg = parse_config(f.read())
    return _apply_overrides(cfg, args)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    from dataclasses import replace

    seed_override = getattr(args, "seed_override", None)
    if seed_override is not None:
        try:
            seeds = tuple(int(s) for s in seed_override.split(","))
        except ValueError as exc:
            raise ConfigError("--seed-override", "expected comma-separated integers") from exc
        cfg = replace(cfg, seeds=seeds)
    out = getattr(args, "out", None)
    if out is not None:
        cfg = replace(cfg, output_path=out)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args)
    summary, _ = run_experiment(cfg, workers=args.workers)
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_compare(args) -> int:
    report = compare_runs(args.dirs, args.threshold,
                          smoothing="raw" if args.raw_crossing else "trailing")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _task_noise_profile(task_section: dict) -> NoiseProfile:
    task = build_task(task_section)
    return task.noise


def _cmd_diagnose(args) -> int:
    with open(os.path.join(args.dir, "config.json"), "r", encoding="utf-8") as f:
        config = json.load(f)
    with open(os.path.join(args.dir, "summary.json"), "r", encoding="utf-8") as f:
        summary = json.load(f)
    task = build_task(config["task"])
    profile = task.noise
    groups = {spec.name: spec.group for spec in task.layers}
    consts = [default_equivalence_constants(spec.group, spec.shape) for spec in task.layers]
    c1 = min(c for c, _ in consts)
    c2 = max(c for _, c in consts)
    beta2 = config["optimizer"]["beta2"]
    alpha = config["optimizer"]["alpha"]
    params = BoundParams(c1=c1, c2=c2, delta=args.delta, beta2=beta2, profile=profile)
    interval_ok = (
        config["optimizer"]["kind"] == "lanton"
        and config["optimizer"]["noise_option"] == "II"
        and config["optimizer"]["noise_update_interval"] == 1
    )
    per_seed = []
    for seed in summary["seeds"]:
        records = read_metrics(os.path.join(args.dir, f"seed_{seed}.csv"))
        entry = {"seed": seed}
        entry["alpha_ratio"] = alpha_ratio_envelope(
            records, params, alpha,
            layer_groups={k: g.value for k, g in groups.items()},
        )
        if interval_ok:
            entry["h_bounds"] = h_bounds_check(records, params)
            entry["noise_range"] = noise_range_estimate(
                records, beta2, layer_groups={k: g.value for k, g in groups.items()},
            )
        per_seed.append(entry)
    report = {
        "run": args.dir,
        "c1": c1,
        "c2": c2,
        "delta": args.delta,
        "tracker_bounds_applicable": interval_ok,
        "per_seed": per_seed,
    }
    _write_text_atomic(os.path.join(args.dir, "diagnostics.json"),
                       json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _set_path(obj: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = obj
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def _cmd_sweep(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        base_raw = json.load(f)
    with open(args.grid, "r", encoding="utf-8") as f:
        grid = json.load(f)
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("--grid", "expected a non-empty object of path -> values")
    keys = sorted(grid)
    for key in keys:
        if not isinstance(grid[key], list) or not grid[key]:
            raise ConfigError(f"--grid {key}", "expected a non-empty list of values")
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        raw = json.loads(json.dumps(base_raw))
        label_parts = []
        for key, value in zip(keys, combo):
            _set_path(raw, key, value)
            label_parts.append(f"{key.split('.')[-1]}={value}")
        label = "_".join(label_parts)
        cfg = parse_config(json.dumps(raw))
        cfg = _apply_overrides(cfg, args)
        from dataclasses import replace

        cfg = replace(cfg, output_path=os.path.join(cfg.output_path, label))
        summary, _ = run_experiment(cfg, workers=args.workers)
        results.append({"label": label, "output_path": cfg.output_path,
                        "summary": summary})
    print(json.dumps({"sweep": results}, sort_keys=True, indent=2))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "diagnose": _cmd_diagnose,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        payload = {"error": "config", "field": exc.field, "message": str(exc)}
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
