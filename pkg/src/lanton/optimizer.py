"""Noise-adaptive layer-wise LMO optimizer and reference baselines.

Each step runs three phases per layer:

1. momentum:   B <- beta1 * B + (1 - beta1) * G  (first step sets B = G)
2. direction:  O <- lmo(group, B)
3. rate:       a variance tracker H accumulates squared dual-norm gradient
               differences; the scaling alpha_l = alpha / sqrt(alpha^2 + H)
               is compared against its group maximum, and the base learning
               rate is multiplied by sqrt(alpha_l / alpha_max). Noisier
               layers therefore move with smaller steps while the least
               noisy layer in every group keeps the full rate.

The tracker difference is either the previous step's gradient ("option I",
no extra gradient evaluations) or an independent twin gradient at the same
point ("option II"). Tracker updates run every `noise_update_interval`
steps; ratios are frozen in between because H does not change.

Two step modes exist: "raw" applies eta_t * sqrt(ratio) uniformly, while
"practical" folds in the per-group rate scales used for transformer-style
stacks (hidden_scale * sqrt(max(d_in, d_out)) for hidden layers, r1 for
embedding/head layers, r2 for vector layers).

Decoupled weight decay, when enabled, multiplies parameters by
(1 - eta_t * weight_decay) with the base rate before the update is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lmo import lmo
from .norms import Group, dual_norm

__all__ = [
    "LayerSpec",
    "LantonConfig",
    "LantonState",
    "LayerStats",
    "GradientError",
    "init_state",
    "cosine_schedule_lr",
    "update_noise_tracker",
    "alpha_and_ratio",
    "lanton_step",
    "baseline_step",
    "BASELINE_KINDS",
]

BASELINE_KINDS = ("fixed_rate_lmo", "signum", "sgd")


class GradientError(ValueError):
    """A gradient carried NaN/Inf entries; the message names the layer."""


@dataclass(frozen=True)
class LayerSpec:
    """Shape, group membership and optional curvature bound of one layer."""

    name: str
    shape: tuple[int, ...]
    group: Group
    smoothness: float | None = None

    def __post_init__(self):
        if any(d < 1 for d in self.shape):
            raise ValueError(f"layer {self.name}: dims must be >= 1, got {self.shape}")
        if self.group is Group.VECTOR_NORM and len(self.shape) != 1:
            raise ValueError(f"layer {self.name}: vector_norm group needs a 1-D shape")
        if self.group is not Group.VECTOR_NORM and len(self.shape) != 2:
            raise ValueError(f"layer {self.name}: group {self.group.value} needs a 2-D shape")
        if self.smoothness is not None and self.smoothness < 0:
            raise ValueError(f"layer {self.name}: smoothness must be >= 0")


@dataclass
class LantonConfig:
    """Hyperparameters for the optimizer and its schedule."""

    total_steps: int
    alpha: float = 0.05
    beta1: float = 0.95
    beta2: float = 0.9
    eta_max: float = 5e-3
    eta_min: float = 5e-4
    warmup_steps: int = 0
    weight_decay: float = 0.0
    r1: float = 300.0
    r2: float = 1.0
    hidden_scale: float = 0.2
    noise_option: str = "I"
    noise_update_interval: int = 10
    ns_steps: int = 5
    oracle_polar: bool = False
    embedding_dual: str = "default"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("beta1 must be in [0, 1)")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must be in [0, 1)")
        if not self.eta_max > 0 or not self.eta_min > 0:
            raise ValueError("eta_max and eta_min must be > 0")
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must be <= eta_max")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be < total_steps")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not self.r1 > 0 or not self.r2 > 0 or not self.hidden_scale > 0:
            raise ValueError("r1, r2 and hidden_scale must be > 0")
        if self.noise_option not in ("I", "II"):
            raise ValueError("noise_option must be 'I' or 'II'")
        if self.noise_update_interval < 1:
            raise ValueError("noise_update_interval must be >= 1")
        if self.ns_steps < 1:
            raise ValueError("ns_steps must be >= 1")
        if self.embedding_dual not in ("default", "alternate"):
            raise ValueError("embedding_dual must be 'default' or 'alternate'")


@dataclass
class LantonState:
    """Mutable per-run optimizer state."""

    layers: tuple[LayerSpec, ...]
    momentum: dict[str, np.ndarray | None]
    h: dict[str, float]
    prev_grad: dict[str, np.ndarray | None]
    t: int = 0
    _by_name: dict[str, LayerSpec] = field(default_factory=dict, repr=False)

    def layer(self, name: str) -> LayerSpec:
        return self._by_name[name]


def init_state(layers) -> LantonState:
    layers = tuple(layers)
    names = [l.name for l in layers]
    if len(set(names)) != len(names):
        raise ValueError("layer names must be unique")
    return LantonState(
        layers=layers,
        momentum={l.name: None for l in layers},
        h={l.name: 0.0 for l in layers},
        prev_grad={l.name: None for l in layers},
        t=0,
        _by_name={l.name: l for l in layers},
    )


def cosine_schedule_lr(t: int, cfg: LantonConfig) -> float:
    """Base learning rate at step t: linear warmup, then cosine decay.

    During warmup the rate ramps as eta_max * (t + 1) / warmup_steps. After
    warmup the cosine runs from eta_max down to eta_min over the remaining
    total_steps - warmup_steps steps.
    """
    if t < 0 or t > cfg.total_steps:
        raise ValueError(f"step {t} outside [0, {cfg.total_steps}]")
    if t < cfg.warmup_steps:
        return cfg.eta_max * (t + 1) / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    rel = t - cfg.warmup_steps
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + math.cos(rel * math.pi / span))


def update_noise_tracker(state: LantonState, layer_name: str, g_t, other, cfg: LantonConfig) -> float:
    """Fold one squared dual-norm gradient difference into the layer tracker.

    Runs only on steps with ``t % noise_update_interval == 0``; other steps
    leave H unchanged. ``other`` is the previous gradient (option I) or the
    twin gradient (option II); passing None skips the update, which is how
    option I's first step behaves.
    """
    spec = state.layer(layer_name)
    h = state.h[layer_name]
    if state.t % cfg.noise_update_interval != 0 or other is None:
        return h
    g_t = np.asarray(g_t, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if g_t.shape != tuple(spec.shape) or other.shape != g_t.shape:
        raise ValueError(
            f"layer {layer_name}: tracker shapes {g_t.shape}/{other.shape} "
            f"do not match spec {spec.shape}"
        )
    diff = dual_norm(spec.group, g_t - other, embedding_dual=cfg.embedding_dual)
    h = cfg.beta2 * h + (1.0 - cfg.beta2) * diff * diff
    state.h[layer_name] = h
    return h


def alpha_and_ratio(state: LantonState, cfg: LantonConfig, group: Group | None = None):
    """Per-layer scaling alpha_l = alpha / sqrt(alpha^2 + H) and its ratio
    to the group maximum. At least one layer per group has ratio exactly 1.
    """
    layers = [l for l in state.layers if group is None or l.group is group]
    alphas = {
        l.name: cfg.alpha / math.sqrt(cfg.alpha * cfg.alpha + state.h[l.name])
        for l in layers
    }
    group_max: dict[Group, float] = {}
    for l in layers:
        cur = group_max.get(l.group)
        if cur is None or alphas[l.name] > cur:
            group_max[l.group] = alphas[l.name]
    ratios = {l.name: alphas[l.name] / group_max[l.group] for l in layers}
    return alphas, ratios


@dataclass(frozen=True)
class LayerStats:
    """Telemetry produced for one layer by one step."""

    eta_eff: float
    ratio: float
    h: float
    dual_grad_norm: float


def _check_grads(state: LantonState, grads) -> None:
    names = {l.name for l in state.layers}
    if set(grads) != names:
        raise ValueError(f"gradients for {sorted(set(grads))} do not cover layers {sorted(names)}")
    for spec in state.layers:
        g = np.asarray(grads[spec.name], dtype=np.float64)
        if g.shape != tuple(spec.shape):
            raise ValueError(f"layer {spec.name}: gradient shape {g.shape} != {spec.shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in layer {spec.name}")


def _effective_lr(spec: LayerSpec, eta_base: float, ratio: float, cfg: LantonConfig, mode: str) -> float:
    if mode == "raw":
        return eta_base * math.sqrt(ratio)
    if mode == "practical":
        if spec.group is Group.HIDDEN:
            d_out, d_in = spec.shape
            return cfg.hidden_scale * eta_base * math.sqrt(max(d_in, d_out) * ratio)
        if spec.group is Group.EMBEDDING_HEAD:
            return cfg.r1 * eta_base * math.sqrt(ratio)
        return cfg.r2 * eta_base * math.sqrt(ratio)
    raise ValueError(f"mode must be 'raw' or 'practical', got {mode!r}")


def lanton_step(
    state: LantonState,
    grads,
    cfg: LantonConfig,
    mode: str = "raw",
    twins=None,
    params=None,
    force_unit_ratio: bool = False,
    log_dual_norm: bool = True,
):
    """Advance the optimizer one step.

    Returns ``(deltas, stats)``: per-layer parameter increments (add them to
    the parameters) and per-layer :class:`LayerStats`. ``twins`` is required
    on tracker-update steps under option II. ``params`` is required whenever
    weight_decay > 0, since the decay term is part of the returned delta.
    """
    _check_grads(state, grads)
    if cfg.weight_decay > 0.0 and params is None:
        raise ValueError("params are required when weight_decay > 0")
    eta_base = cosine_schedule_lr(state.t, cfg)

    for spec in state.layers:
        g = np.asarray(grads[spec.name], dtype=np.float64)
        if state.momentum[spec.name] is None:
            state.momentum[spec.name] = g.copy()
        else:
            state.momentum[spec.name] = (
                cfg.beta1 * state.momentum[spec.name] + (1.0 - cfg.beta1) * g
            )

    update_step = state.t % cfg.noise_update_interval == 0
    if update_step and not force_unit_ratio:
        for spec in state.layers:
            g = np.asarray(grads[spec.name], dtype=np.float64)
            if cfg.noise_option == "II":
                if twins is None or spec.name not in twins:
                    raise ValueError(
                        f"layer {spec.name}: option II needs a twin gradient on tracker-update steps"
                    )
                other = twins[spec.name]
            else:
                other = state.prev_grad[spec.name]
            update_noise_tracker(state, spec.name, g, other, cfg)
    if cfg.noise_option == "I" and not force_unit_ratio:
        for spec in state.layers:
            state.prev_grad[spec.name] = np.asarray(grads[spec.name], dtype=np.float64).copy()

    if force_unit_ratio:
        ratios = {l.name: 1.0 for l in state.layers}
    else:
        _, ratios = alpha_and_ratio(state, cfg)

    deltas = {}
    stats = {}
    for spec in state.layers:
        b = state.momentum[spec.name]
        o = lmo(spec.group, b, ns_steps=cfg.ns_steps, oracle=cfg.oracle_polar)
        eta_eff = _effective_lr(spec, eta_base, ratios[spec.name], cfg, mode)
        # The oracle output already points down the anti-gradient (it minimizes
        # <B, x> over the unit ball), so the descent step adds it.
        delta = eta_eff * o
        if cfg.weight_decay > 0.0:
            delta = delta - eta_base * cfg.weight_decay * np.asarray(params[spec.name], dtype=np.float64)
        deltas[spec.name] = delta
        dgn = (
            dual_norm(spec.group, np.asarray(grads[spec.name], dtype=np.float64),
                      embedding_dual=cfg.embedding_dual)
            if log_dual_norm
            else math.nan
        )
        stats[spec.name] = LayerStats(
            eta_eff=eta_eff, ratio=ratios[spec.name], h=state.h[spec.name], dual_grad_norm=dgn
        )

    state.t += 1
    return deltas, stats


def baseline_step(
    kind: str,
    state: LantonState,
    grads,
    cfg: LantonConfig,
    mode: str = "raw",
    params=None,
    log_dual_norm: bool = True,
):
    """One step of a reference baseline sharing the schedule and state layout.

    * ``fixed_rate_lmo`` -- the LMO update with the noise ratio forced to 1.
    * ``signum``         -- momentum followed by -eta_t * sign(B) everywhere.
    * ``sgd``            -- plain X <- X - eta_t * G.
    """
    if kind == "fixed_rate_lmo":
        return lanton_step(
            state, grads, cfg, mode=mode, params=params,
            force_unit_ratio=True, log_dual_norm=log_dual_norm,
        )
    if kind not in ("signum", "sgd"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    _check_grads(state, grads)
    if cfg.weight_decay > 0.0 and params is None:
        raise ValueError("params are required when weight_decay > 0")
    eta_base = cosine_schedule_lr(state.t, cfg)

    deltas = {}
    stats = {}
    for spec in state.layers:
        g = np.asarray(grads[spec.name], dtype=np.float64)
        if kind == "signum":
            if state.momentum[spec.name] is None:
                state.momentum[spec.name] = g.copy()
            else:
                state.momentum[spec.name] = (
                    cfg.beta1 * state.momentum[spec.name] + (1.0 - cfg.beta1) * g
                )
            delta = -eta_base * np.sign(state.momentum[spec.name])
        else:
            delta = -eta_base * g
        if cfg.weight_decay > 0.0:
            delta = delta - eta_base * cfg.weight_decay * np.asarray(params[spec.name], dtype=np.float64)
        deltas[spec.name] = delta
        dgn = (
            dual_norm(spec.group, g, embedding_dual=cfg.embedding_dual)
            if log_dual_norm
            else math.nan
        )
        stats[spec.name] = LayerStats(eta_eff=eta_base, ratio=1.0, h=0.0, dual_grad_norm=dgn)

    state.t += 1
    return deltas, stats
