"""Derived feature formulas and windowed, labelled samples."""
from __future__ import annotations

import datetime as dt
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .embeddings import CONSTANT, CROSS_COUNTY, TIME_DEPENDENT, GroupSpec
from .ordinal import DEFAULT_PERCENTILES, ClassBoundaries, assign_class, derive_boundaries
from .universe import ActivityGrid, GroupData, Universe

log = logging.getLogger(__name__)

WINDOW = 13
HORIZON = 7
SERIAL_INTERVAL = 5.1
R0_LOOKBACK = 10


class UndefinedMetricError(ValueError):
    pass


# ---------------------------------------------------------------- formulas


def daily_average(xy: np.ndarray, intensity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse repeated readings of the same cell into its mean intensity."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    s = np.asarray(intensity, dtype=np.float64)
    cells, inverse = np.unique(xy, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(cells) == len(xy):
        return xy, s
    return cells, np.bincount(inverse, weights=s) / np.bincount(inverse)


def venables_distance(xy: np.ndarray, intensity: np.ndarray) -> float:
    """Activity-weighted mean pairwise distance between cells (km)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    s = np.asarray(intensity, dtype=np.float64)
    if len(s) < 2:
        raise UndefinedMetricError("Venables distance needs at least two cells")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise UndefinedMetricError("cell intensities must be finite and non-negative")
    d = pdist(xy)
    i, j = np.triu_indices(len(s), k=1)
    w = s[i] * s[j]
    total = w.sum()
    if total <= 0:
        raise UndefinedMetricError("all pairwise intensity weights are zero")
    return float((w * d).sum() / total)


def reproduction_number(cumulative: np.ndarray, day: int, tau: float = SERIAL_INTERVAL, lookback: int = R0_LOOKBACK) -> float:
    """Exponential-growth estimate exp(dlog(cases) * tau / lookback)."""
    if day - lookback < 0:
        raise UndefinedMetricError(f"day {day} has no {lookback}-day lookback")
    now, then = float(cumulative[day]), float(cumulative[day - lookback])
    if now < 1 or then < 1:
        raise UndefinedMetricError(f"zero cases at an endpoint (i(d)={now}, i(d-{lookback})={then})")
    return float(np.exp((np.log(now) - np.log(then)) * tau / lookback))


def weekly_rise(cumulative: np.ndarray, day: int) -> int:
    """cumulative(day) - cumulative(day - 7), floored at 0."""
    if day - 7 < 0 or day >= len(cumulative):
        raise IndexError(f"series does not cover days {day - 7}..{day}")
    rise = int(cumulative[day]) - int(cumulative[day - 7])
    if rise < 0:
        warnings.warn(f"negative weekly rise {rise} on day {day}; floored to 0", RuntimeWarning, stacklevel=2)
        return 0
    return rise


def weekly_rises(cases: np.ndarray) -> np.ndarray:
    """[C, D] rises for every county and day >= 7 (earlier days are -1)."""
    out = np.full(cases.shape, -1, dtype=np.int64)
    diff = cases[:, 7:].astype(np.int64) - cases[:, :-7].astype(np.int64)
    if np.any(diff < 0):
        warnings.warn(f"{int((diff < 0).sum())} negative weekly rises floored to 0", RuntimeWarning, stacklevel=2)
    out[:, 7:] = np.maximum(diff, 0)
    return out


# ---------------------------------------------------------------- derived groups


def case_features(cases: np.ndarray) -> GroupData:
    C, D = cases.shape
    vals = np.zeros((D, C, 3))
    cum = cases.astype(np.float64)
    back = np.concatenate([np.repeat(cum[:, :1], 7, axis=1), cum[:, :-7]], axis=1)
    vals[:, :, 0] = np.maximum(cum - back, 0).T
    vals[1:, :, 1] = np.maximum(np.diff(cum, axis=1), 0).T
    vals[:, :, 2] = np.log1p(cum).T
    return GroupData("past_rise", TIME_DEPENDENT, ("weekly_rise", "daily_new", "log_cumulative"), vals, derived=True)


def r0_features(cases: np.ndarray, tau: float = SERIAL_INTERVAL, lookback: int = R0_LOOKBACK) -> GroupData:
    """R0 with a validity flag; undefined days get R0 = 0 and flag 0."""
    C, D = cases.shape
    vals = np.zeros((D, C, 3))
    for c in range(C):
        for d in range(D):
            try:
                r0 = reproduction_number(cases[c], d, tau, lookback)
            except UndefinedMetricError:
                continue
            vals[d, c] = (r0, 1.0, np.log(r0) / tau)
    return GroupData("reproduction_number", TIME_DEPENDENT, ("r0", "r0_valid", "growth_rate"), vals, derived=True)


def venables_features(grid: ActivityGrid, n_counties: int, n_days: int) -> GroupData:
    vals = np.zeros((n_days, n_counties, 3))
    key = grid.county.astype(np.int64) * n_days + grid.day.astype(np.int64)
    order = np.argsort(key, kind="stable")
    bounds = np.searchsorted(key[order], np.arange(n_counties * n_days + 1))
    for c in range(n_counties):
        for d in range(n_days):
            rows = order[bounds[c * n_days + d] : bounds[c * n_days + d + 1]]
            xy, s = daily_average(grid.xy[rows], grid.intensity[rows])
            try:
                vals[d, c, 0] = venables_distance(xy, s)
            except UndefinedMetricError:
                pass
            vals[d, c, 1] = s.sum()
            vals[d, c, 2] = np.count_nonzero(s)
    return GroupData("venables_distance", TIME_DEPENDENT, ("venables_km", "total_intensity", "active_cells"), vals, derived=True)


# ---------------------------------------------------------------- samples


@dataclass
class Dataset:
    """Windowed samples; ``inputs`` maps group name to [N, ...] arrays."""

    registry: list[GroupSpec]
    inputs: dict[str, np.ndarray]
    rises: np.ndarray
    classes: np.ndarray
    county: np.ndarray
    day: np.ndarray
    start: dt.date
    boundaries: ClassBoundaries | None = None
    counties: list[str] = field(default_factory=list)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.classes)

    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=int(d)) for d in self.day]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.registry,
            {k: v[idx] for k, v in self.inputs.items()},
            self.rises[idx],
            self.classes[idx],
            self.county[idx],
            self.day[idx],
            self.start,
            self.boundaries,
            self.counties,
        )

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            self.registry,
            {k: np.concatenate([v, other.inputs[k]]) for k, v in self.inputs.items()},
            np.concatenate([self.rises, other.rises]),
            np.concatenate([self.classes, other.classes]),
            np.concatenate([self.county, other.county]),
            np.concatenate([self.day, other.day]),
            self.start,
            self.boundaries,
            self.counties,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Inclusive, ascending label-date ranges for train / validation / test."""

    train: tuple[dt.date, dt.date]
    val: tuple[dt.date, dt.date]
    test: tuple[dt.date, dt.date]

    def __post_init__(self):
        parts = [self.train, self.val, self.test]
        for lo, hi in parts:
            if hi < lo:
                raise ValueError(f"empty or reversed range {lo}..{hi}")
        if not (self.train[1] < self.val[0] and self.val[1] < self.test[0]):
            raise ValueError("train, validation and test ranges must be disjoint and ascending")

    @classmethod
    def from_fractions(cls, label_dates: Sequence[dt.date], fractions=(0.68, 0.12, 0.20)) -> "SplitSpec":
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {fractions}")
        dates = sorted(set(label_dates))
        L = len(dates)
        n_train = max(1, int(round(fractions[0] * L)))
        n_val = max(1, int(round(fractions[1] * L)))
        if n_train + n_val >= L:
            raise ValueError(f"{L} label dates are too few for a three-way split")
        return cls(
            (dates[0], dates[n_train - 1]),
            (dates[n_train], dates[n_train + n_val - 1]),
            (dates[n_train + n_val], dates[-1]),
        )

    def to_dict(self) -> dict:
        return {k: [getattr(self, k)[0].isoformat(), getattr(self, k)[1].isoformat()] for k in ("train", "val", "test")}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(*(tuple(dt.date.fromisoformat(x) for x in d[k]) for k in ("train", "val", "test")))

    def partition(self, ds: Dataset) -> dict[str, Dataset]:
        dates = np.array([ds.start + dt.timedelta(days=int(d)) for d in ds.day])
        out = {}
        for name in ("train", "val", "test"):
            lo, hi = getattr(self, name)
            out[name] = ds.subset(np.flatnonzero((dates >= lo) & (dates <= hi)))
        return out


def model_registry(u: Universe, window: int = WINDOW) -> list[GroupSpec]:
    return [
        GroupSpec(g.name, g.kind, g.features, t=1 if g.kind == CONSTANT else window, c=u.n_counties if g.kind == CROSS_COUNTY else 1)
        for g in u.groups.values()
    ]


def input_window(label_day: int, window: int = WINDOW, horizon: int = HORIZON) -> tuple[int, int]:
    """Inclusive first/last input day for a label day; the rise covers days after the window."""
    end = label_day - horizon
    return end - window + 1, end


def window_inputs(
    u: Universe,
    registry: list[GroupSpec],
    county: np.ndarray,
    day: np.ndarray,
    window: int = WINDOW,
    horizon: int = HORIZON,
) -> dict[str, np.ndarray]:
    """Per-group input tensors for (county, label day) pairs; cross-county is [N, t, c_src, n]."""
    offsets = np.arange(-window + 1, 1)
    win = (day - horizon)[:, None] + offsets[None, :]  # [N, t]
    if win.size and (win.min() < 0 or win.max() >= u.n_days):
        raise IndexError("input window outside the universe span")
    inputs = {}
    for spec in registry:
        g = u.groups[spec.name]
        if spec.kind == CONSTANT:
            inputs[spec.name] = g.values[county]
        elif spec.kind == TIME_DEPENDENT:
            inputs[spec.name] = g.values[win, county[:, None]]
        else:
            inputs[spec.name] = g.values[win, :, county[:, None], :]
    return inputs


def build_samples(
    u: Universe,
    window: int = WINDOW,
    horizon: int = HORIZON,
    boundaries: ClassBoundaries | None = None,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    label_days: Sequence[int] | None = None,
    counties: Sequence[int] | None = None,
) -> Dataset:
    """One sample per (county, label day) whose input window fits in the universe.

    Label = class of the weekly rise ending on the label day; the window ends
    ``horizon`` days earlier, so no day of the rise interval is an input.
    """
    first = window - 1 + horizon
    all_days = np.arange(u.n_days) if label_days is None else np.asarray(label_days, dtype=np.int64)
    keep = (all_days >= max(first, 7)) & (all_days < u.n_days)
    dropped = int((~keep).sum())
    if dropped:
        msg = f"dropped {dropped} label date(s) lacking {window}+{horizon} days of history"
        (log.info if label_days is None else log.warning)(msg)
    days = all_days[keep]
    cidx = np.arange(u.n_counties) if counties is None else np.asarray(counties, dtype=np.int64)
    county = np.repeat(cidx, len(days))
    day = np.tile(days, len(cidx))
    rises = weekly_rises(u.cases)[county, day]
    if boundaries is None:
        boundaries = derive_boundaries(rises, percentiles)
    registry = model_registry(u, window)
    inputs = window_inputs(u, registry, county, day, window, horizon)
    assert np.all(day - horizon < day - 6), "input window overlaps the label interval"
    return Dataset(
        registry,
        inputs,
        rises,
        np.asarray(assign_class(rises, boundaries), dtype=np.int64),
        county,
        day,
        u.start,
        boundaries,
        list(u.counties),
        dropped,
    )
