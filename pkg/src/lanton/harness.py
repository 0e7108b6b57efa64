"""Experiment runner: JSON configs, seeded runs, CSV metrics, comparisons.

A run is fully described by a JSON config (see ``parse_config``). For each
seed the runner executes the configured optimizer on the configured task and
writes one CSV of per-step, per-layer telemetry plus a JSON summary. Outputs
are byte-identical for identical (config, seed), independent of how many
seeds execute in parallel, because every random stream is derived from the
seed and no wall-clock data reaches the files.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .norms import Group
from .optimizer import (
    BASELINE_KINDS,
    LantonConfig,
    LayerSpec,
    LayerStats,
    baseline_step,
    init_state,
    lanton_step,
)
from .tasks import (
    DatasetSpec,
    MlpTask,
    NoiseProfile,
    QuadraticTask,
    gen_dataset,
    heterogeneous_quadratic,
    noise_streams,
    transformer_noise_quadratic,
    perturb_gradients,
    value_grad,
)

__all__ = [
    "ConfigError",
    "TelemetryFlags",
    "ExperimentConfig",
    "RunRecord",
    "parse_config",
    "build_task",
    "task_signature",
    "execute_run",
    "run_experiment",
    "emit_metrics",
    "read_metrics",
    "steps_to_threshold",
    "compare_runs",
    "load_run_dir",
    "CSV_HEADER",
]

CSV_HEADER = "step,loss,layer,eta_eff,ratio,H,dual_grad_norm"

OPTIMIZER_KINDS = ("lanton",) + BASELINE_KINDS


class ConfigError(ValueError):
    """Config validation failure carrying the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class TelemetryFlags:
    h: bool = True
    ratio: bool = True
    dual_grad_norm: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    task_section: dict
    optimizer_kind: str
    mode: str
    lanton: LantonConfig
    seeds: tuple[int, ...]
    total_steps: int
    telemetry: TelemetryFlags
    output_path: str
    loss_threshold: float | None


@dataclass(frozen=True)
class RunRecord:
    """One step of telemetry: loss plus per-layer stats."""

    step: int
    loss: float
    layers: dict[str, LayerStats]
    wall_ns: int = 0


# ----------------------------------------------------------------------------
# config parsing


def _check_keys(obj: dict, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return obj[key]


def _number(value, path: str, lo=None, hi=None, lo_open=False, hi_open=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(path, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


def _integer(value, path: str, lo=None, hi=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}, got {value}")
    return value


def _boolean(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected a boolean, got {value!r}")
    return value


def _string(value, path: str, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(path, f"must be one of {sorted(choices)}, got {value!r}")
    return value


_QUAD_PRESET_KEYS = {
    "transformer": {"kind", "preset", "seed", "shape", "smoothness"},
    "heterogeneous": {"kind", "preset", "seed", "shape", "smoothness",
                      "n_layers", "spread", "sigma_hi_base", "lo_frac"},
}
_LAYER_KEYS = {"name", "shape", "group", "smoothness", "sigma_lo", "sigma_hi"}
_MLP_KEYS = {"kind", "widths", "n_samples", "dataset_seed", "label_noise", "seed", "noise"}
_OPTIMIZER_KEYS = {
    "kind", "mode", "alpha", "beta1", "beta2", "eta_max", "eta_min",
    "warmup_steps", "weight_decay", "r1", "r2", "hidden_scale",
    "noise_option", "noise_update_interval", "ns_steps", "oracle_polar",
    "embedding_dual",
}
_TOP_KEYS = {"task", "optimizer", "seeds", "total_steps", "telemetry",
             "output_path", "loss_threshold"}


def _parse_shape(value, path: str, arity=None) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, f"expected a non-empty list of dims, got {value!r}")
    dims = tuple(_integer(d, f"{path}[{i}]", lo=1) for i, d in enumerate(value))
    if arity is not None and len(dims) != arity:
        raise ConfigError(path, f"expected {arity} dims, got {len(dims)}")
    return dims


def _parse_task(section, path: str = "task") -> dict:
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    kind = _string(_require(section, "kind", path), f"{path}.kind", {"quadratic", "mlp"})
    out: dict = {"kind": kind}
    if kind == "mlp":
        _check_keys(section, _MLP_KEYS, path)
        widths = _parse_shape(_require(section, "widths", path), f"{path}.widths", arity=3)
        out["widths"] = list(widths)
        out["n_samples"] = _integer(section.get("n_samples", 256), f"{path}.n_samples", lo=1)
        out["dataset_seed"] = _integer(section.get("dataset_seed", 0), f"{path}.dataset_seed")
        out["label_noise"] = _number(section.get("label_noise", 0.0), f"{path}.label_noise", lo=0.0)
        out["seed"] = _integer(section.get("seed", 0), f"{path}.seed")
        noise = section.get("noise", {"w1": [0.0, 0.0], "w2": [0.0, 0.0]})
        if not isinstance(noise, dict):
            raise ConfigError(f"{path}.noise", "expected an object")
        _check_keys(noise, {"w1", "w2"}, f"{path}.noise")
        out["noise"] = {}
        for name in ("w1", "w2"):
            pair = noise.get(name, [0.0, 0.0])
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigError(f"{path}.noise.{name}", "expected [sigma_lo, sigma_hi]")
            lo = _number(pair[0], f"{path}.noise.{name}[0]", lo=0.0)
            hi = _number(pair[1], f"{path}.noise.{name}[1]", lo=0.0)
            if lo > hi:
                raise ConfigError(f"{path}.noise.{name}", f"sigma_lo {lo} > sigma_hi {hi}")
            out["noise"][name] = [lo, hi]
        return out

    # quadratic
    preset = section.get("preset")
    if preset is not None:
        preset = _string(preset, f"{path}.preset", set(_QUAD_PRESET_KEYS))
        _check_keys(section, _QUAD_PRESET_KEYS[preset], path)
        out["preset"] = preset
        out["seed"] = _integer(section.get("seed", 0), f"{path}.seed")
        out["shape"] = list(_parse_shape(section.get("shape", [8, 8]), f"{path}.shape", arity=2))
        out["smoothness"] = _number(section.get("smoothness", 1.0), f"{path}.smoothness", lo=0.0, lo_open=True)
        if preset == "heterogeneous":
            out["n_layers"] = _integer(section.get("n_layers", 6), f"{path}.n_layers", lo=2)
            out["spread"] = _number(section.get("spread", 100.0), f"{path}.spread", lo=1.0)
            out["sigma_hi_base"] = _number(section.get("sigma_hi_base", 0.003), f"{path}.sigma_hi_base", lo=0.0)
            out["lo_frac"] = _number(section.get("lo_frac", 1.0 / 3.0), f"{path}.lo_frac", lo=0.0, hi=1.0)
        return out

    _check_keys(section, {"kind", "seed", "layers"}, path)
    out["seed"] = _integer(section.get("seed", 0), f"{path}.seed")
    layers = _require(section, "layers", path)
    if not isinstance(layers, list) or not layers:
        raise ConfigError(f"{path}.layers", "expected a non-empty list")
    out["layers"] = []
    seen = set()
    for i, layer in enumerate(layers):
        lp = f"{path}.layers[{i}]"
        if not isinstance(layer, dict):
            raise ConfigError(lp, "expected an object")
        _check_keys(layer, _LAYER_KEYS, lp)
        name = _string(_require(layer, "name", lp), f"{lp}.name")
        if name in seen:
            raise ConfigError(f"{lp}.name", f"duplicate layer name {name!r}")
        seen.add(name)
        group = _string(_require(layer, "group", lp), f"{lp}.group",
                        {g.value for g in Group})
        arity = 1 if group == Group.VECTOR_NORM.value else 2
        shape = _parse_shape(_require(layer, "shape", lp), f"{lp}.shape", arity=arity)
        lo = _number(layer.get("sigma_lo", 0.0), f"{lp}.sigma_lo", lo=0.0)
        hi = _number(layer.get("sigma_hi", 0.0), f"{lp}.sigma_hi", lo=0.0)
        if lo > hi:
            raise ConfigError(f"{lp}.sigma_lo", f"sigma_lo {lo} > sigma_hi {hi}")
        out["layers"].append({
            "name": name,
            "shape": list(shape),
            "group": group,
            "smoothness": _number(layer.get("smoothness", 1.0), f"{lp}.smoothness", lo=0.0, lo_open=True),
            "sigma_lo": lo,
            "sigma_hi": hi,
        })
    return out


def _parse_optimizer(section, total_steps: int, path: str = "optimizer") -> tuple[str, str, LantonConfig, dict]:
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    _check_keys(section, _OPTIMIZER_KEYS, path)
    kind = _string(section.get("kind", "lanton"), f"{path}.kind", set(OPTIMIZER_KINDS))
    mode = _string(section.get("mode", "raw"), f"{path}.mode", {"raw", "practical"})
    beta1 = _number(section.get("beta1", 0.95), f"{path}.beta1", lo=0.0, hi=1.0, hi_open=True)
    beta2 = _number(section.get("beta2", 0.9), f"{path}.beta2", lo=0.0, hi=1.0, hi_open=True)
    # The momentum window and the scaling knee are tied unless alpha is given.
    alpha = _number(section.get("alpha", 1.0 - beta1), f"{path}.alpha", lo=0.0, lo_open=True)
    eta_max = _number(section.get("eta_max", 5e-3), f"{path}.eta_max", lo=0.0, lo_open=True)
    eta_min = _number(section.get("eta_min", 5e-4), f"{path}.eta_min", lo=0.0, lo_open=True)
    if eta_min > eta_max:
        raise ConfigError(f"{path}.eta_min", f"eta_min {eta_min} > eta_max {eta_max}")
    warmup = _integer(section.get("warmup_steps", 0), f"{path}.warmup_steps", lo=0)
    if warmup >= total_steps:
        raise ConfigError(f"{path}.warmup_steps", f"must be < total_steps ({total_steps})")
    cfg = LantonConfig(
        total_steps=total_steps,
        alpha=alpha,
        beta1=beta1,
        beta2=beta2,
        eta_max=eta_max,
        eta_min=eta_min,
        warmup_steps=warmup,
        weight_decay=_number(section.get("weight_decay", 0.0), f"{path}.weight_decay", lo=0.0),
        r1=_number(section.get("r1", 300.0), f"{path}.r1", lo=0.0, lo_open=True),
        r2=_number(section.get("r2", 1.0), f"{path}.r2", lo=0.0, lo_open=True),
        hidden_scale=_number(section.get("hidden_scale", 0.2), f"{path}.hidden_scale", lo=0.0, lo_open=True),
        noise_option=_string(section.get("noise_option", "I"), f"{path}.noise_option", {"I", "II"}),
        noise_update_interval=_integer(section.get("noise_update_interval", 10),
                                       f"{path}.noise_update_interval", lo=1),
        ns_steps=_integer(section.get("ns_steps", 5), f"{path}.ns_steps", lo=1),
        oracle_polar=_boolean(section.get("oracle_polar", False), f"{path}.oracle_polar"),
        embedding_dual=_string(section.get("embedding_dual", "default"), f"{path}.embedding_dual",
                               {"default", "alternate"}),
    )
    echo = {
        "kind": kind, "mode": mode, "alpha": cfg.alpha, "beta1": cfg.beta1,
        "beta2": cfg.beta2, "eta_max": cfg.eta_max, "eta_min": cfg.eta_min,
        "warmup_steps": cfg.warmup_steps, "weight_decay": cfg.weight_decay,
        "r1": cfg.r1, "r2": cfg.r2, "hidden_scale": cfg.hidden_scale,
        "noise_option": cfg.noise_option,
        "noise_update_interval": cfg.noise_update_interval,
        "ns_steps": cfg.ns_steps, "oracle_polar": cfg.oracle_polar,
        "embedding_dual": cfg.embedding_dual,
    }
    return kind, mode, cfg, echo


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config, filling defaults.

    Unknown keys and out-of-range values are rejected with the offending
    field path in the message.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "top level must be an object")
    _check_keys(raw, _TOP_KEYS, "")
    task_section = _parse_task(_require(raw, "task", ""))
    total_steps = _integer(raw.get("total_steps", 1000), "total_steps", lo=1)
    kind, mode, lanton, _ = _parse_optimizer(_require(raw, "optimizer", ""), total_steps)
    seeds_raw = raw.get("seeds", [0])
    if not isinstance(seeds_raw, list) or not seeds_raw:
        raise ConfigError("seeds", "expected a non-empty list of integers")
    seeds = tuple(_integer(s, f"seeds[{i}]") for i, s in enumerate(seeds_raw))
    tele_raw = raw.get("telemetry", {})
    if not isinstance(tele_raw, dict):
        raise ConfigError("telemetry", "expected an object")
    _check_keys(tele_raw, {"h", "ratio", "dual_grad_norm"}, "telemetry")
    telemetry = TelemetryFlags(
        h=_boolean(tele_raw.get("h", True), "telemetry.h"),
        ratio=_boolean(tele_raw.get("ratio", True), "telemetry.ratio"),
        dual_grad_norm=_boolean(tele_raw.get("dual_grad_norm", True), "telemetry.dual_grad_norm"),
    )
    output_path = _string(raw.get("output_path", "runs/run"), "output_path")
    threshold = raw.get("loss_threshold", None)
    if threshold is not None:
        threshold = _number(threshold, "loss_threshold")
    return ExperimentConfig(
        task_section=task_section,
        optimizer_kind=kind,
        mode=mode,
        lanton=lanton,
        seeds=seeds,
        total_steps=total_steps,
        telemetry=telemetry,
        output_path=output_path,
        loss_threshold=threshold,
    )


def canonical_config(cfg: ExperimentConfig) -> dict:
    """Fully-defaulted mirror of the config, stable for hashing and echoing."""
    return {
        "task": cfg.task_section,
        "optimizer": _optimizer_echo_fields(cfg),
        "seeds": list(cfg.seeds),
        "total_steps": cfg.total_steps,
        "telemetry": {
            "h": cfg.telemetry.h,
            "ratio": cfg.telemetry.ratio,
            "dual_grad_norm": cfg.telemetry.dual_grad_norm,
        },
        "output_path": cfg.output_path,
        "loss_threshold": cfg.loss_threshold,
    }


def _optimizer_echo_fields(cfg: ExperimentConfig) -> dict:
    c = cfg.lanton
    return {
        "kind": cfg.optimizer_kind, "mode": cfg.mode, "alpha": c.alpha,
        "beta1": c.beta1, "beta2": c.beta2, "eta_max": c.eta_max,
        "eta_min": c.eta_min, "warmup_steps": c.warmup_steps,
        "weight_decay": c.weight_decay, "r1": c.r1, "r2": c.r2,
        "hidden_scale": c.hidden_scale, "noise_option": c.noise_option,
        "noise_update_interval": c.noise_update_interval, "ns_steps": c.ns_steps,
        "oracle_polar": c.oracle_polar, "embedding_dual": c.embedding_dual,
    }


def task_signature(task_section: dict) -> str:
    blob = json.dumps(task_section, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def build_task(task_section: dict):
    """Instantiate the task object described by a parsed task section."""
    kind = task_section["kind"]
    if kind == "mlp":
        spec = DatasetSpec(
            n_samples=task_section["n_samples"],
            input_dim=task_section["widths"][0],
            output_dim=task_section["widths"][2],
            teacher_hidden=task_section["widths"][1],
            label_noise=task_section["label_noise"],
        )
        dataset = gen_dataset(spec, task_section["dataset_seed"])
        radii = {k: tuple(v) for k, v in task_section["noise"].items()}
        return MlpTask(
            widths=tuple(task_section["widths"]),
            dataset=dataset,
            noise=NoiseProfile(radii),
            seed=task_section["seed"],
        )
    preset = task_section.get("preset")
    if preset == "transformer":
        return transformer_noise_quadratic(
            shape=tuple(task_section["shape"]),
            smoothness=task_section["smoothness"],
            seed=task_section["seed"],
        )
    if preset == "heterogeneous":
        return heterogeneous_quadratic(
            n_layers=task_section["n_layers"],
            spread=task_section["spread"],
            sigma_hi_base=task_section["sigma_hi_base"],
            lo_frac=task_section["lo_frac"],
            shape=tuple(task_section["shape"]),
            smoothness=task_section["smoothness"],
            seed=task_section["seed"],
        )
    from .tasks import _seeded_target  # layer-list form shares target streams

    layers = []
    targets = {}
    radii = {}
    for i, layer in enumerate(task_section["layers"]):
        spec = LayerSpec(
            name=layer["name"],
            shape=tuple(layer["shape"]),
            group=Group.parse(layer["group"]),
            smoothness=layer["smoothness"],
        )
        layers.append(spec)
        targets[spec.name] = _seeded_target(task_section["seed"], i, spec.shape)
        radii[spec.name] = (layer["sigma_lo"], layer["sigma_hi"])
    return QuadraticTask(tuple(layers), targets, NoiseProfile(radii))


# ----------------------------------------------------------------------------
# execution


def _mask_stats(stats: dict[str, LayerStats], telemetry: TelemetryFlags) -> dict[str, LayerStats]:
    if telemetry.h and telemetry.ratio:
        return stats
    out = {}
    for name, st in stats.items():
        out[name] = replace(
            st,
            h=st.h if telemetry.h else math.nan,
            ratio=st.ratio if telemetry.ratio else math.nan,
        )
    return out


def execute_run(cfg: ExperimentConfig, seed: int, task=None) -> tuple[list[RunRecord], dict]:
    """Run one seed; returns the telemetry stream and a summary dict."""
    if task is None:
        task = build_task(cfg.task_section)
    layers = task.layers
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in task.initial_params().items()}
    state = init_state(layers)
    rngs = noise_streams(seed, layers)
    opt = cfg.lanton
    records: list[RunRecord] = []
    aborted_at = None
    for t in range(cfg.total_steps):
        tick = time.perf_counter_ns()
        loss, exact = value_grad(task, params)
        if not math.isfinite(loss):
            aborted_at = t
            break
        twins = None
        if cfg.optimizer_kind == "lanton" and opt.noise_option == "II" and t % opt.noise_update_interval == 0:
            grads, twins = perturb_gradients(layers, exact, task.noise, rngs, twin=True)
        else:
            grads = perturb_gradients(layers, exact, task.noise, rngs)
        if cfg.optimizer_kind == "lanton":
            deltas, stats = lanton_step(
                state, grads, opt, mode=cfg.mode, twins=twins, params=params,
                log_dual_norm=cfg.telemetry.dual_grad_norm,
            )
        else:
            deltas, stats = baseline_step(
                cfg.optimizer_kind, state, grads, opt, mode=cfg.mode, params=params,
                log_dual_norm=cfg.telemetry.dual_grad_norm,
            )
        for name, delta in deltas.items():
            params[name] += delta
        records.append(RunRecord(
            step=t,
            loss=loss,
            layers=_mask_stats(stats, cfg.telemetry),
            wall_ns=time.perf_counter_ns() - tick,
        ))
    losses = [r.loss for r in records]
    summary = {
        "seed": seed,
        "steps_run": len(records),
        "final_loss": losses[-1] if losses else None,
        "best_loss": min(losses) if losses else None,
        "aborted_at": aborted_at,
    }
    if cfg.loss_threshold is not None:
        summary["steps_to_threshold"] = steps_to_threshold(losses, cfg.loss_threshold)
    return records, summary


def run_experiment(cfg: ExperimentConfig, workers: int = 1):
    """Execute every seed, write CSVs plus a JSON summary, return both.

    Seeds run independently (optionally in parallel); a NaN/Inf loss aborts
    that seed's run at the offending step and the remaining seeds continue.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    task = build_task(cfg.task_section)
    outdir = cfg.output_path
    os.makedirs(outdir, exist_ok=True)
    _write_text_atomic(
        os.path.join(outdir, "config.json"),
        json.dumps(canonical_config(cfg), sort_keys=True, indent=2) + "\n",
    )
    if workers == 1:
        results = [execute_run(cfg, seed, task=task) for seed in cfg.seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: execute_run(cfg, s, task=task), cfg.seeds))
    records_by_seed = {}
    per_seed = []
    for seed, (records, summary) in zip(cfg.seeds, results):
        emit_metrics(records, os.path.join(outdir, f"seed_{seed}.csv"))
        records_by_seed[seed] = records
        per_seed.append(summary)
    summary = {
        "task_signature": task_signature(cfg.task_section),
        "optimizer": {"kind": cfg.optimizer_kind, "mode": cfg.mode},
        "total_steps": cfg.total_steps,
        "seeds": list(cfg.seeds),
        "loss_threshold": cfg.loss_threshold,
        "per_seed": per_seed,
    }
    _write_text_atomic(
        os.path.join(outdir, "summary.json"),
        json.dumps(summary, sort_keys=True, indent=2) + "\n",
    )
    return summary, records_by_seed


# ----------------------------------------------------------------------------
# metrics files


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_metrics(records, path) -> None:
    """Write the long-format telemetry CSV (one row per step and layer).

    Floats are printed with 17 significant digits so a re-read reproduces
    them bit-exactly. UTF-8, LF line endings, written atomically.
    """
    lines = [CSV_HEADER]
    for rec in records:
        for name, st in rec.layers.items():
            lines.append(",".join((
                str(rec.step), _fmt(rec.loss), name,
                _fmt(st.eta_eff), _fmt(st.ratio), _fmt(st.h), _fmt(st.dual_grad_norm),
            )))
    _write_text_atomic(path, "\n".join(lines) + "\n")


def read_metrics(path) -> list[RunRecord]:
    """Re-read an emitted CSV into records (wall times are not persisted)."""
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected header")
    records: list[RunRecord] = []
    cur_step = None
    cur_loss = None
    cur_layers: dict[str, LayerStats] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}: malformed row {line!r}")
        step = int(parts[0])
        if step != cur_step:
            if cur_step is not None:
                if step <= cur_step:
                    raise ValueError(f"{path}: steps not strictly increasing at {step}")
                records.append(RunRecord(step=cur_step, loss=cur_loss, layers=cur_layers))
                cur_layers = {}
            cur_step = step
            cur_loss = float(parts[1])
        cur_layers[parts[2]] = LayerStats(
            eta_eff=float(parts[3]), ratio=float(parts[4]),
            h=float(parts[5]), dual_grad_norm=float(parts[6]),
        )
    if cur_step is not None:
        records.append(RunRecord(step=cur_step, loss=cur_loss, layers=cur_layers))
    return records


def _write_text_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


# ----------------------------------------------------------------------------
# comparison


def steps_to_threshold(losses, threshold: float, smoothing: str = "trailing",
                       window: int = 20) -> int | None:
    """First step whose (smoothed) loss crosses below the threshold.

    The default smoothing is a trailing mean over up to `window` steps, which
    keeps single noise spikes from producing spurious crossings; "raw" uses
    the losses as-is.
    """
    if smoothing not in ("trailing", "raw"):
        raise ValueError("smoothing must be 'trailing' or 'raw'")
    acc = 0.0
    vals = list(losses)
    for t, loss in enumerate(vals):
        if smoothing == "raw":
            smoothed = loss
        else:
            lo = max(0, t - window + 1)
            smoothed = sum(vals[lo:t + 1]) / (t + 1 - lo)
        if smoothed <= threshold:
            return t
    return None


def load_run_dir(path: str):
    """Load config, summary and per-seed losses from a run directory."""
    with open(os.path.join(path, "config.json"), "r", encoding="utf-8") as f:
        config = json.load(f)
    with open(os.path.join(path, "summary.json"), "r", encoding="utf-8") as f:
        summary = json.load(f)
    losses_by_seed = {}
    for seed in summary["seeds"]:
        records = read_metrics(os.path.join(path, f"seed_{seed}.csv"))
        losses_by_seed[seed] = [r.loss for r in records]
    return config, summary, losses_by_seed


def compare_runs(paths, threshold: float, smoothing: str = "trailing",
                 window: int = 20) -> dict:
    """Compare run directories on steps-to-threshold and final loss.

    All runs must share the same task signature. The pairwise speedup of a
    candidate over a baseline is median steps(baseline) / median steps(candidate),
    so comparing a run with itself yields exactly 1.0.
    """
    if len(paths) < 2:
        raise ValueError("need at least two run directories")
    runs = []
    signature = None
    for path in paths:
        config, summary, losses_by_seed = load_run_dir(path)
        if signature is None:
            signature = summary["task_signature"]
        elif summary["task_signature"] != signature:
            raise ValueError(f"{path}: task signature does not match {paths[0]}")
        steps = []
        finals = []
        for seed in summary["seeds"]:
            losses = losses_by_seed[seed]
            s = steps_to_threshold(losses, threshold, smoothing=smoothing, window=window)
            steps.append(math.inf if s is None else s)
            finals.append(losses[-1])
        med = statistics.median(steps)
        q25, q50, q75 = (float(q) for q in np.quantile(np.asarray(finals), [0.25, 0.5, 0.75]))
        runs.append({
            "path": path,
            "optimizer": config["optimizer"]["kind"],
            "mode": config["optimizer"]["mode"],
            "per_seed_steps_to_threshold": [None if math.isinf(s) else int(s) for s in steps],
            "median_steps_to_threshold": None if math.isinf(med) else med,
            "final_loss_quantiles": {"q25": q25, "q50": q50, "q75": q75},
            "_median": med,
        })
    speedups = []
    for i, cand in enumerate(runs):
        for j, base in enumerate(runs):
            if i == j:
                continue
            if math.isinf(cand["_median"]) or math.isinf(base["_median"]) or cand["_median"] == 0:
                ratio = None
            else:
                ratio = base["_median"] / cand["_median"]
            speedups.append({
                "candidate": cand["path"], "baseline": base["path"], "speedup": ratio,
            })
    for run in runs:
        run.pop("_median")
    return {
        "threshold": threshold,
        "smoothing": smoothing,
        "task_signature": signature,
        "runs": runs,
        "speedups": speedups,
    }
