"""Dense float64 kernels: Frobenius norm, one-sided Jacobi SVD, power iteration.

Everything here is a pure function on plain numpy arrays. Matrices are 2-D
float64 arrays in row-major order, vectors are 1-D float64 arrays. All kernels
are deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdConvergenceError",
    "SvdResult",
    "as_matrix",
    "as_vector",
    "require_finite",
    "frobenius_norm",
    "jacobi_svd",
    "spectral_norm_power",
]

# One-sided Jacobi: rotations are skipped once the column coupling falls below
# this relative threshold; a sweep with no rotations means convergence.
_JACOBI_REL_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 60


class SvdConvergenceError(RuntimeError):
    """Raised when the Jacobi sweeps fail to converge within the sweep cap."""


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(s) @ vt with s sorted descending.

    u is (m, k), s is (k,), vt is (k, n) with k = min(m, n).
    """

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix with positive dims, got shape {a.shape}")
    return a


def as_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] < 1:
        raise ValueError(f"expected a 1-D vector with positive dim, got shape {w.shape}")
    return w


def require_finite(name: str, arr: np.ndarray) -> None:
    """Reject NaN/Inf at task and optimizer boundaries."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite entries in {name}")


def frobenius_norm(a) -> float:
    r = np.asarray(a, dtype=np.float64).ravel()
    return math.sqrt(float(np.dot(r, r)))


def _complete_orthonormal(u: np.ndarray, missing: list[int]) -> None:
    """Fill the listed columns of u with an orthonormal completion, in place."""
    m = u.shape[0]
    filled = [i for i in range(u.shape[1]) if i not in missing]
    basis = [u[:, i] for i in filled]
    slot = 0
    for k in range(m):
        if slot >= len(missing):
            break
        cand = np.zeros(m)
        cand[k] = 1.0
        for _ in range(2):  # twice for numerical safety
            for b in basis:
                cand -= float(b @ cand) * b
        nrm = float(np.linalg.norm(cand))
        if nrm > 0.5:
            cand /= nrm
            u[:, missing[slot]] = cand
            basis.append(cand)
            slot += 1
    if slot < len(missing):
        raise SvdConvergenceError("failed to complete an orthonormal basis")


def jacobi_svd(a) -> SvdResult:
    """One-sided Jacobi SVD with cyclic sweeps.

    The working matrix is stored transposed so each column lives in a
    contiguous row. Wide inputs are factorized through their transpose.
    Ties between equal singular values keep the rotation output order
    (stable descending sort), so the result is deterministic.
    """
    a = as_matrix(a)
    require_finite("jacobi_svd input", a)
    m, n = a.shape
    if m < n:
        res = jacobi_svd(a.T)
        return SvdResult(u=res.vt.T.copy(), s=res.s, vt=res.u.T.copy())

    # wt[i] is column i of the working matrix; vt_rows[i] accumulates the
    # right singular vector attached to that column.
    wt = np.ascontiguousarray(a.T, dtype=np.float64).copy()
    vt_rows = np.eye(n)

    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = wt[p]
                wq = wt[q]
                apq = float(wp @ wq)
                app = float(wp @ wp)
                aqq = float(wq @ wq)
                if abs(apq) <= _JACOBI_REL_TOL * math.sqrt(app * aqq):
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                sign = 1.0 if tau >= 0.0 else -1.0
                t = sign / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                new_p = c * wp - s * wq
                wt[q] = s * wp + c * wq
                wt[p] = new_p
                new_vp = c * vt_rows[p] - s * vt_rows[q]
                vt_rows[q] = s * vt_rows[p] + c * vt_rows[q]
                vt_rows[p] = new_vp
        if not rotated:
            break
    else:
        raise SvdConvergenceError(
            f"one-sided Jacobi did not converge within {_JACOBI_MAX_SWEEPS} sweeps"
        )

    norms = np.sqrt(np.sum(wt * wt, axis=1))
    order = np.argsort(-norms, kind="stable")
    s_vals = norms[order]
    wt = wt[order]
    vt_rows = vt_rows[order]

    u = np.zeros((m, n))
    tiny = max(m, n) * np.finfo(np.float64).eps * (s_vals[0] if s_vals[0] > 0.0 else 1.0)
    degenerate = []
    for i in range(n):
        if s_vals[i] > tiny:
            u[:, i] = wt[i] / s_vals[i]
        else:
            degenerate.append(i)
    if degenerate:
        _complete_orthonormal(u, degenerate)

    return SvdResult(u=u, s=s_vals, vt=vt_rows)


def spectral_norm_power(a, iters: int = 100, seed: int = 0) -> float:
    """Largest singular value estimated by power iteration on a.T @ a.

    The returned value is a Rayleigh-type quotient, so it never exceeds the
    true spectral norm (up to roundoff) and approaches it from below as the
    iteration count grows. The starting vector is drawn from a generator
    seeded with `seed`, making the estimate deterministic.
    """
    a = as_matrix(a)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(a.shape[1])
    v /= float(np.linalg.norm(v))
    for _ in range(iters):
        w = a @ v
        z = a.T @ w
        nz = float(np.linalg.norm(z))
        if nz == 0.0:
            return 0.0
        v = z / nz
    return float(np.linalg.norm(a @ v))
