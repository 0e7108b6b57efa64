"""Per-group primal and dual norms for the three parameter families.

Layers fall into three groups:

* ``HIDDEN``        -- weight matrices updated with orthogonalized momentum.
                       Primal norm: sqrt(d_in/d_out) * spectral.
                       Dual norm:   sqrt(d_out/d_in) * nuclear.
* ``EMBEDDING_HEAD`` -- weight-sharing matrices updated with signed momentum.
                       Primal norm: d_in * max-abs-entry.
                       Dual norm (default): (1/d_in) * entrywise l1, the exact
                       dual of the primal above, so the pairing identity
                       <b, lmo(b)> = -dual(b) holds. An alternate dual, the
                       max column abs-sum induced norm, is selectable; the two
                       disagree and both are kept available on purpose.
* ``VECTOR_NORM``    -- gain/bias vectors.
                       Primal norm: rms. Dual norm: sqrt(d) * euclidean.

Zero inputs return exactly 0; there are no epsilon floors here because a zero
norm is meaningful (a noiseless or converged layer).
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .linalg import as_matrix, as_vector

__all__ = ["Group", "nuclear_norm", "rms_norm", "dual_norm", "primal_norm"]


class Group(Enum):
    HIDDEN = "hidden"
    EMBEDDING_HEAD = "embedding_head"
    VECTOR_NORM = "vector_norm"

    @classmethod
    def parse(cls, text: str) -> "Group":
        for g in cls:
            if g.value == text:
                return g
        raise ValueError(f"unknown group {text!r}; expected one of "
                         f"{[g.value for g in cls]}")


def nuclear_norm(a) -> float:
    """Sum of singular values (dual of the spectral norm)."""
    a = as_matrix(a)
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def rms_norm(w) -> float:
    """(1/sqrt(d)) * euclidean norm; the all-ones vector has rms norm 1."""
    w = as_vector(w)
    return float(np.linalg.norm(w)) / math.sqrt(w.shape[0])


def _check_group_shape(group: Group, x: np.ndarray) -> np.ndarray:
    if group is Group.VECTOR_NORM:
        return as_vector(x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"group {group.value} expects a matrix, got shape {x.shape}")
    return as_matrix(x)


def dual_norm(group: Group, x, embedding_dual: str = "default") -> float:
    """Dual norm of x under the norm attached to its group.

    For ``EMBEDDING_HEAD``, ``embedding_dual`` selects between the
    duality-consistent scaled entrywise l1 ("default") and the max column
    abs-sum induced norm ("alternate").
    """
    x = _check_group_shape(group, x)
    if group is Group.HIDDEN:
        d_out, d_in = x.shape
        return math.sqrt(d_out / d_in) * nuclear_norm(x)
    if group is Group.EMBEDDING_HEAD:
        d_in = x.shape[1]
        if embedding_dual == "default":
            return float(np.sum(np.abs(x))) / d_in
        if embedding_dual == "alternate":
            return float(np.max(np.sum(np.abs(x), axis=0)))
        raise ValueError(f"embedding_dual must be 'default' or 'alternate', got {embedding_dual!r}")
    # VECTOR_NORM
    return math.sqrt(x.shape[0]) * float(np.linalg.norm(x))


def primal_norm(group: Group, x) -> float:
    """Primal norm of x under the norm attached to its group.

    The unit ball of this norm is the feasible set the group's linear
    minimization oracle optimizes over.
    """
    x = _check_group_shape(group, x)
    if group is Group.HIDDEN:
        d_out, d_in = x.shape
        top = float(np.linalg.svd(x, compute_uv=False)[0])
        return math.sqrt(d_in / d_out) * top
    if group is Group.EMBEDDING_HEAD:
        d_in = x.shape[1]
        return d_in * float(np.max(np.abs(x)))
    return rms_norm(x)
