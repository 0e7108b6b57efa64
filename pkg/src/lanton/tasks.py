"""Desk-scale objectives with controlled layer-wise smoothness and noise.

Two task families:

* :class:`QuadraticTask` -- f(X) = sum_l 0.5 * L_l * ||X_l - A_l||_F^2, so
  each layer is exactly L_l-smooth and the gradient map is linear.
* :class:`MlpTask`       -- a two-weight tanh network with mean-squared-error
  loss on a seeded synthetic regression dataset.

Stochastic gradients add synthetic noise whose dual norm is drawn uniformly
from a per-layer interval [sigma_lo, sigma_hi], so every draw respects the
two-sided bound by construction. Sign symmetrization (flip with probability
one half) makes the noise exactly zero-mean.

Random streams are derived from (seed, purpose, layer index) seed sequences,
one independent stream per layer and purpose, so replay is deterministic and
independent of evaluation order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .linalg import require_finite
from .norms import Group, dual_norm
from .optimizer import LayerSpec

__all__ = [
    "NoiseProfile",
    "QuadraticTask",
    "DatasetSpec",
    "Dataset",
    "MlpTask",
    "quadratic_value_grad",
    "mlp_value_grad",
    "value_grad",
    "sample_dual_noise",
    "perturb_gradients",
    "stochastic_grad",
    "gen_dataset",
    "save_matrix",
    "load_matrix",
    "noise_streams",
    "transformer_noise_quadratic",
    "heterogeneous_quadratic",
    "TRANSFORMER_NOISE_RADII",
]

# Purposes for stream derivation; fixed codes keep replay stable.
_PURPOSE_NOISE = 1
_PURPOSE_TARGETS = 2
_PURPOSE_INIT = 3
_PURPOSE_DATA = 4

# Noise radii (sigma_lo, sigma_hi) of the transformer preset: query-key,
# value-output and feed-forward layer roles carry very different measured
# noise scales despite sharing one norm group.
TRANSFORMER_NOISE_RADII = {
    "qk": (0.003, 0.026),
    "vo": (0.009, 0.117),
    "mlp": (0.018, 0.107),
}


def _stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(purpose, index))))


def noise_streams(seed: int, layers) -> dict[str, np.random.Generator]:
    """One independent noise generator per layer, derived from the run seed."""
    return {spec.name: _stream(seed, _PURPOSE_NOISE, i) for i, spec in enumerate(layers)}


@dataclass(frozen=True)
class NoiseProfile:
    """Per-layer dual-norm noise radii (sigma_lo, sigma_hi)."""

    radii: dict[str, tuple[float, float]]

    def __post_init__(self):
        for name, (lo, hi) in self.radii.items():
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"layer {name}: noise radii must be finite")
            if lo < 0 or lo > hi:
                raise ValueError(f"layer {name}: need 0 <= sigma_lo <= sigma_hi, got ({lo}, {hi})")

    @classmethod
    def zero(cls, layers) -> "NoiseProfile":
        return cls({spec.name: (0.0, 0.0) for spec in layers})


@dataclass(frozen=True)
class QuadraticTask:
    """Sum of per-layer quadratics 0.5 * L_l * ||X_l - A_l||_F^2."""

    layers: tuple[LayerSpec, ...]
    targets: dict[str, np.ndarray]
    noise: NoiseProfile

    def __post_init__(self):
        for spec in self.layers:
            if spec.smoothness is None or spec.smoothness <= 0:
                raise ValueError(f"layer {spec.name}: quadratic task needs smoothness > 0")
            a = self.targets[spec.name]
            if a.shape != tuple(spec.shape):
                raise ValueError(f"layer {spec.name}: target shape {a.shape} != {spec.shape}")
            require_finite(f"target {spec.name}", a)
            if spec.name not in self.noise.radii:
                raise ValueError(f"layer {spec.name}: missing noise radii")

    def initial_params(self) -> dict[str, np.ndarray]:
        return {spec.name: np.zeros(spec.shape) for spec in self.layers}


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int
    input_dim: int
    output_dim: int
    teacher_hidden: int
    label_noise: float = 0.0

    def __post_init__(self):
        if min(self.n_samples, self.input_dim, self.output_dim, self.teacher_hidden) < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.label_noise < 0:
            raise ValueError("label_noise must be >= 0")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, input_dim)
    labels: np.ndarray    # (n, output_dim)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        require_finite("features", self.features)
        require_finite("labels", self.labels)


@dataclass(frozen=True)
class MlpTask:
    """Two-layer tanh network w2 @ tanh(w1 @ x) trained with mean squared error."""

    widths: tuple[int, int, int]
    dataset: Dataset
    noise: NoiseProfile
    seed: int = 0

    def __post_init__(self):
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be >= 1")
        i, _, o = self.widths
        if self.dataset.features.shape[1] != i or self.dataset.labels.shape[1] != o:
            raise ValueError("dataset dims do not match widths")
        for name in ("w1", "w2"):
            if name not in self.noise.radii:
                raise ValueError(f"missing noise radii for {name}")

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        i, h, o = self.widths
        return (
            LayerSpec("w1", (h, i), Group.HIDDEN),
            LayerSpec("w2", (o, h), Group.HIDDEN),
        )

    def initial_params(self) -> dict[str, np.ndarray]:
        i, h, o = self.widths
        g1 = _stream(self.seed, _PURPOSE_INIT, 0)
        g2 = _stream(self.seed, _PURPOSE_INIT, 1)
        return {
            "w1": g1.standard_normal((h, i)) / math.sqrt(i),
            "w2": g2.standard_normal((o, h)) / math.sqrt(h),
        }


def quadratic_value_grad(task: QuadraticTask, x: dict[str, np.ndarray]):
    """Exact loss and per-layer gradients of the quadratic objective."""
    loss = 0.0
    grads = {}
    for spec in task.layers:
        xi = np.asarray(x[spec.name], dtype=np.float64)
        if xi.shape != tuple(spec.shape):
            raise ValueError(f"layer {spec.name}: shape {xi.shape} != {spec.shape}")
        diff = xi - task.targets[spec.name]
        loss += 0.5 * spec.smoothness * float(np.sum(diff * diff))
        grads[spec.name] = spec.smoothness * diff
    return loss, grads


def mlp_value_grad(task: MlpTask, params: dict[str, np.ndarray]):
    """Forward pass, MSE loss and exact backpropagated gradients."""
    i, h, o = task.widths
    w1 = np.asarray(params["w1"], dtype=np.float64)
    w2 = np.asarray(params["w2"], dtype=np.float64)
    if w1.shape != (h, i) or w2.shape != (o, h):
        raise ValueError(f"param shapes {w1.shape}/{w2.shape} do not match widths {task.widths}")
    x = task.dataset.features
    y = task.dataset.labels
    n = x.shape[0]
    hidden = np.tanh(x @ w1.T)            # (n, h)
    pred = hidden @ w2.T                  # (n, o)
    resid = pred - y
    loss = float(np.mean(resid * resid))
    # d loss / d pred
    r = resid * (2.0 / (n * o))
    g_w2 = r.T @ hidden
    g_hidden = (r @ w2) * (1.0 - hidden * hidden)
    g_w1 = g_hidden.T @ x
    return loss, {"w1": g_w1, "w2": g_w2}


def value_grad(task, x):
    if isinstance(task, QuadraticTask):
        return quadratic_value_grad(task, x)
    if isinstance(task, MlpTask):
        return mlp_value_grad(task, x)
    raise TypeError(f"unsupported task type {type(task).__name__}")


def sample_dual_noise(group: Group, shape, sigma_lo: float, sigma_hi: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Noise element whose dual norm is uniform on [sigma_lo, sigma_hi].

    Entries are drawn i.i.d. standard normal and rescaled so the dual norm
    equals the drawn radius exactly (a zero draw is resampled). A zero upper
    radius returns the exact zero element without consuming the stream.
    """
    if sigma_lo < 0 or sigma_lo > sigma_hi:
        raise ValueError(f"need 0 <= sigma_lo <= sigma_hi, got ({sigma_lo}, {sigma_hi})")
    if sigma_hi == 0.0:
        return np.zeros(shape)
    radius = float(rng.uniform(sigma_lo, sigma_hi))
    while True:
        sample = rng.standard_normal(shape)
        nrm = dual_norm(group, sample)
        if nrm > 0.0:
            break
    if radius == 0.0:
        return np.zeros(shape)
    return sample * (radius / nrm)


def perturb_gradients(layers, exact_grads, noise: NoiseProfile,
                      rngs: dict[str, np.random.Generator], twin: bool = False):
    """Add sign-symmetrized dual-norm noise to exact gradients.

    With ``twin=True`` two independently perturbed copies are returned, both
    evaluated at the same point.
    """
    outs = [dict() for _ in range(2 if twin else 1)]
    for spec in layers:
        lo, hi = noise.radii[spec.name]
        g = np.asarray(exact_grads[spec.name], dtype=np.float64)
        for out in outs:
            e = sample_dual_noise(spec.group, tuple(spec.shape), lo, hi, rngs[spec.name])
            if hi > 0.0 and rngs[spec.name].uniform() < 0.5:
                e = -e
            out[spec.name] = g + e
    return (outs[0], outs[1]) if twin else outs[0]


def stochastic_grad(task, x, noise: NoiseProfile, rngs, twin: bool = False):
    """Per-layer stochastic gradients at x (a pair of them when twin=True)."""
    _, exact = value_grad(task, x)
    return perturb_gradients(task.layers, exact, noise, rngs, twin=twin)


def gen_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    """Synthetic regression data from a seeded tanh teacher network."""
    rng = _stream(seed, _PURPOSE_DATA, 0)
    x = rng.standard_normal((spec.n_samples, spec.input_dim))
    t1 = rng.standard_normal((spec.teacher_hidden, spec.input_dim)) / math.sqrt(spec.input_dim)
    t2 = rng.standard_normal((spec.output_dim, spec.teacher_hidden)) / math.sqrt(spec.teacher_hidden)
    y = np.tanh(x @ t1.T) @ t2.T
    if spec.label_noise > 0.0:
        y = y + spec.label_noise * rng.standard_normal(y.shape)
    return Dataset(features=x, labels=y)


_MAGIC = b"LNTD"
_VERSION = 1


def save_matrix(path, a: np.ndarray) -> None:
    """Write one matrix in the binary cache format.

    Layout, all little-endian: magic "LNTD", version u32, rows u64, cols u64,
    then rows*cols float64 values in row-major order.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("cache format stores 2-D matrices")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQQ", _MAGIC, _VERSION, a.shape[0], a.shape[1]))
        f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(struct.calcsize("<4sIQQ"))
        magic, version, rows, cols = struct.unpack("<4sIQQ", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = f.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _seeded_target(seed: int, index: int, shape) -> np.ndarray:
    g = _stream(seed, _PURPOSE_TARGETS, index)
    a = g.standard_normal(shape)
    return a / math.sqrt(a.size)


def _quadratic_from_radii(names_radii, shape, smoothness, seed, group=Group.HIDDEN):
    layers = []
    targets = {}
    radii = {}
    for i, (name, (lo, hi)) in enumerate(names_radii):
        spec = LayerSpec(name, shape, group, smoothness=smoothness)
        layers.append(spec)
        targets[name] = _seeded_target(seed, i, shape)
        radii[name] = (lo, hi)
    return QuadraticTask(tuple(layers), targets, NoiseProfile(radii))


def transformer_noise_quadratic(shape=(8, 8), smoothness: float = 1.0, seed: int = 0) -> QuadraticTask:
    """Hidden-group quadratic with the transformer per-role noise radii."""
    return _quadratic_from_radii(sorted(TRANSFORMER_NOISE_RADII.items()), shape, smoothness, seed)


def heterogeneous_quadratic(n_layers: int = 6, spread: float = 100.0,
                            sigma_hi_base: float = 0.003, lo_frac: float = 1.0 / 3.0,
                            shape=(8, 8), smoothness: float = 1.0, seed: int = 0) -> QuadraticTask:
    """Hidden-group quadratic whose upper noise radii span a `spread` factor."""
    if n_layers < 2:
        raise ValueError("need at least 2 layers")
    names_radii = []
    for i in range(n_layers):
        hi = sigma_hi_base * spread ** (i / (n_layers - 1))
        names_radii.append((f"layer{i}", (lo_frac * hi, hi)))
    return _quadratic_from_radii(names_radii, shape, smoothness, seed)
