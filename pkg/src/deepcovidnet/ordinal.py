"""Ordinal output machinery: class boundaries, exceedance-to-class transform, loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import Var

EPS = 1e-12
DEFAULT_PERCENTILES = (0.33, 0.67, 0.90)


class DegenerateClassesError(ValueError):
    pass


@dataclass(frozen=True)
class ClassBoundaries:
    """Sorted rise thresholds; class i covers [C_i, C_{i+1}) with C_0 = 0, C_{n+1} = inf."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("need at least one class boundary")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"class boundaries must be non-decreasing, got {vals}")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def n_classes(self) -> int:
        return len(self.values) + 1

    def ranges(self) -> list[str]:
        edges = [0, *self.values, "inf"]
        return [f"[{lo},{hi})" for lo, hi in zip(edges[:-1], edges[1:])]

    def to_list(self) -> list[int]:
        return list(self.values)


def nearest_rank(sorted_values: np.ndarray, p: float):
    rank = max(1, math.ceil(round(p * len(sorted_values), 9)))
    return sorted_values[rank - 1]


def derive_boundaries(rises: Sequence[int], percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> ClassBoundaries:
    """Nearest-rank percentiles of the pooled rise distribution.

    Boundaries are bumped upward where needed so they stay strictly increasing
    and positive; a split that leaves fewer than two occupied classes raises.
    """
    rises = np.sort(np.asarray(rises, dtype=np.int64))
    if rises.size == 0:
        raise ValueError("cannot derive class boundaries from an empty rise list")
    if np.any(rises < 0):
        raise ValueError("rises must be non-negative")
    ps = list(percentiles)
    if not ps or any(not 0 < p < 1 for p in ps) or any(b <= a for a, b in zip(ps, ps[1:])):
        raise ValueError(f"percentiles must be strictly increasing in (0, 1), got {ps}")
    raw = [int(nearest_rank(rises, p)) for p in ps]
    if len(raw) > 1 and len(set(raw)) == 1:
        raise DegenerateClassesError(f"all boundaries collapse to {raw[0]}")
    out, prev = [], 0
    for b in raw:
        b = max(b, prev + 1)
        out.append(b)
        prev = b
    bounds = ClassBoundaries(tuple(out))
    if np.unique(assign_class(rises, bounds)).size < 2:
        raise DegenerateClassesError(f"boundaries {out} put every rise in one class")
    return bounds


def assign_class(rise, C: ClassBoundaries | Sequence[int]):
    """Index i with C_i <= rise < C_{i+1}; vectorised over ``rise``."""
    values = C.values if isinstance(C, ClassBoundaries) else tuple(C)
    idx = np.searchsorted(np.asarray(values), np.asarray(rise), side="right")
    return int(idx) if np.ndim(idx) == 0 else idx


def telescope(binary_probs: np.ndarray) -> np.ndarray:
    """Raw differences P(x >= C_j) - P(x >= C_{j+1}); may be negative."""
    p = np.asarray(binary_probs, dtype=np.float64)
    ones = np.ones(p.shape[:-1] + (1,))
    zeros = np.zeros(p.shape[:-1] + (1,))
    upper = np.concatenate([ones, p], axis=-1)
    lower = np.concatenate([p, zeros], axis=-1)
    return upper - lower


def to_class_distribution(binary_probs) -> np.ndarray:
    raw = np.maximum(telescope(binary_probs), 0.0)
    return raw / raw.sum(axis=-1, keepdims=True)


def predict_class(class_probs: np.ndarray):
    # np.argmax returns the first maximum, i.e. the lower class on ties
    return np.argmax(class_probs, axis=-1)


def binary_targets(true_class, n: int) -> np.ndarray:
    """Target i (1-based boundary i) is 1 iff the rise reaches C_i, i.e. class >= i."""
    k = np.asarray(true_class)[..., None]
    return (k >= np.arange(1, n + 1)).astype(np.float64)


@dataclass(frozen=True)
class LossValue:
    total: float
    bce_part: float
    ce_part: float


def combined_loss(binary_probs, true_class, C: ClassBoundaries | None = None, lambda_ce: float = 1.0, eps: float = EPS) -> LossValue:
    """Summed binary cross-entropy plus weighted multi-class cross-entropy (batch mean)."""
    p = np.atleast_2d(np.asarray(binary_probs, dtype=np.float64))
    k = np.atleast_1d(np.asarray(true_class))
    n = p.shape[-1]
    if C is not None and C.n != n:
        raise ValueError(f"{n} binary probabilities but {C.n} boundaries")
    if np.any(k < 0) or np.any(k > n) or not np.issubdtype(k.dtype, np.integer):
        raise ValueError(f"class index must be an integer in [0, {n}], got {true_class}")
    y = binary_targets(k, n)
    bce = -(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).sum(axis=-1)
    q = to_class_distribution(p)
    ce = -np.log(q[np.arange(len(k)), k] + eps)
    bce_m, ce_m = float(bce.mean()), float(ce.mean())
    return LossValue(bce_m + lambda_ce * ce_m, bce_m, ce_m)


def ordinal_loss(probs: Var, true_class: np.ndarray, lambda_ce: float = 1.0, eps: float = EPS) -> tuple[Var, Var, Var]:
    """Tape version of :func:`combined_loss`; returns (total, bce, ce) as scalar Vars."""
    tape = probs.tape
    B, n = probs.shape
    k = np.asarray(true_class)
    y = binary_targets(k, n)
    log_p = nc.log(probs + eps)
    log_q = nc.log((1.0 - probs) + eps)
    bce = nc.mean(nc.sum(-(log_p * y + log_q * (1.0 - y)), axis=1))
    upper = nc.concat([tape.constant(np.ones((B, 1))), probs], axis=1)
    lower = nc.concat([probs, tape.constant(np.zeros((B, 1)))], axis=1)
    raw = nc.relu(upper - lower)
    q = raw / nc.sum(raw, axis=1, keepdims=True)
    picked = q[np.arange(B), k]
    ce = nc.mean(-nc.log(picked + eps))
    return bce + ce * lambda_ce, bce, ce
