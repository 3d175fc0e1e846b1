"""Synthetic county universes with a planted, known label signal.

The planted score ``g(y)`` is computed from raw features in the window ending on
day ``y``. Daily new cases are built as ``base + sum_r [g(x-7-7r) - g(x-8-7r)]``,
which telescopes so that the weekly rise ending on day ``d`` is exactly
``7 * base + g(d - 7)``: the label of every sample is a deterministic function of
its own input window (plus the recipe's noise), and cumulative counts never
decrease.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .embeddings import CONSTANT, CROSS_COUNTY, TIME_DEPENDENT
from .features import case_features, r0_features, venables_features
from .universe import ActivityGrid, GroupData, Universe

FEATURE_NAMES = {
    "census": ["pop_density", "median_age", "pct_over_65", "pct_poverty", "pct_employed", "household_size", "pct_commute_short", "pct_uninsured"],
    "vulnerability": ["ccvi", "socioeconomic", "epidemiological", "healthcare", "minority_language", "housing_transport"],
    "social_distancing": ["pct_home", "pct_fulltime", "pct_parttime", "median_distance", "median_dwell"],
    "visitation": ["grocery", "restaurants", "elder_care", "hospitals", "department_stores", "supercenters", "colleges", "amusement"],
    "cross_county": ["inflow_traffic", "source_cumulative_cases", "outflow_traffic"],
}
RAW_KINDS = {
    "census": CONSTANT,
    "vulnerability": CONSTANT,
    "social_distancing": TIME_DEPENDENT,
    "visitation": TIME_DEPENDENT,
    "cross_county": CROSS_COUNTY,
}
DERIVED = {"cross_county/source_cumulative_cases"}
RECIPE_KINDS = ("main", "product", "xor")


class RecipeError(ValueError):
    pass


@dataclass
class SignalTerm:
    """One additive term of the planted score.

    ``main`` uses one feature; ``product`` multiplies two standardized
    summaries; ``xor`` multiplies their signs. Summaries average the last
    ``span`` days of the window (constant features ignore ``span``).
    """

    kind: str
    features: list[str]
    span: int = 13
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in RECIPE_KINDS:
            raise RecipeError(f"unknown recipe kind {self.kind!r}")
        need = 1 if self.kind == "main" else 2
        if len(self.features) != need:
            raise RecipeError(f"{self.kind} term needs {need} feature(s), got {self.features}")
        if self.span < 1:
            raise RecipeError("span must be >= 1")


@dataclass
class SyntheticUniverseSpec:
    counties: int = 20
    days: int = 60
    start_date: str = "2020-04-05"
    seed: int = 0
    group_sizes: dict[str, int] = field(default_factory=lambda: {"census": 6, "vulnerability": 4, "social_distancing": 4, "visitation": 5, "cross_county": 2})
    grid_cells: int = 6
    recipe: list[SignalTerm] = field(default_factory=lambda: [SignalTerm("main", ["social_distancing/pct_home"], span=13)])
    noise: float = 0.2
    rise_scale: float = 40.0
    rise_spread: float = 0.8

    def __post_init__(self):
        self.recipe = [t if isinstance(t, SignalTerm) else SignalTerm(**t) for t in self.recipe]
        for name, n in self.group_sizes.items():
            if name not in RAW_KINDS:
                raise RecipeError(f"unknown raw group {name!r}; expected one of {sorted(RAW_KINDS)}")
            if n < 1:
                raise RecipeError(f"group {name!r} needs at least one feature")
        if self.counties < 2 or self.days < 8:
            raise RecipeError("need at least 2 counties and 8 days")
        declared = set(self.feature_refs())
        for term in self.recipe:
            for ref in term.features:
                if ref not in declared:
                    raise RecipeError(f"recipe references unknown feature {ref!r}")
                if ref in DERIVED:
                    raise RecipeError(f"recipe cannot use derived feature {ref!r}")

    def feature_names(self, group: str) -> list[str]:
        n = self.group_sizes[group]
        base = FEATURE_NAMES[group]
        return base[:n] + [f"{group}_{i}" for i in range(len(base), n)]

    def feature_refs(self) -> list[str]:
        return [f"{g}/{f}" for g in self.group_sizes for f in self.feature_names(g)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticUniverseSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise RecipeError(f"unknown spec field(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticUniverseSpec":
        text = Path(path).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RecipeError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        try:
            return cls.from_dict(d)
        except TypeError as exc:
            raise RecipeError(f"{path}: {exc}") from exc


def bundled_spec(name: str = "desk_small") -> SyntheticUniverseSpec:
    return SyntheticUniverseSpec.from_json(Path(__file__).parent / "data" / f"{name}.json")


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def _raw_groups(spec: SyntheticUniverseSpec) -> dict[str, GroupData]:
    C, D = spec.counties, spec.days
    groups = {}
    for name, n in spec.group_sizes.items():
        kind = RAW_KINDS[name]
        feats = spec.feature_names(name)
        if kind == CONSTANT:
            vals = np.stack([rngmod.substream(spec.seed, f"{rngmod.DATA}.{name}", c).normal(size=n) for c in range(C)])
        elif kind == TIME_DEPENDENT:
            vals = np.stack([rngmod.substream(spec.seed, f"{rngmod.DATA}.{name}", c).normal(size=(D, n)) for c in range(C)], axis=1)
        else:
            # per destination county: log-normal flows from every source
            vals = np.zeros((D, C, C, n))
            for c in range(C):
                r = rngmod.substream(spec.seed, f"{rngmod.DATA}.{name}", c)
                pair_scale = r.normal(size=(C, 1))
                vals[:, :, c, :] = np.exp(pair_scale[None] + 0.5 * r.normal(size=(D, C, n)))
                vals[:, c, c, :] = 0.0
        groups[name] = GroupData(name, kind, feats, vals)
    return groups


def _summary(groups: dict[str, GroupData], ref: str, span: int, D: int, C: int) -> np.ndarray:
    """[D, C] mean of the last ``span`` days up to each day (truncated at day 0)."""
    gname, fname = ref.split("/")
    g = groups[gname]
    j = g.features.index(fname)
    if g.kind == CONSTANT:
        return np.broadcast_to(g.values[:, j], (D, C)).copy()
    x = g.values[..., j]
    if g.kind == CROSS_COUNTY:
        x = x.sum(axis=1)  # total over sources, per destination
    csum = np.cumsum(x, axis=0)
    out = np.empty_like(csum)
    for d in range(D):
        lo = max(0, d - span + 1)
        out[d] = (csum[d] - (csum[lo - 1] if lo > 0 else 0)) / (d - lo + 1)
    return out


def planted_score(spec: SyntheticUniverseSpec, groups: dict[str, GroupData]) -> np.ndarray:
    """Noise-free standardized score [D, C] for the window ending on each day."""
    D, C = spec.days, spec.counties
    total = np.zeros((D, C))
    for term in spec.recipe:
        parts = [_standardize(_summary(groups, ref, term.span, D, C)) for ref in term.features]
        if term.kind == "main":
            val = parts[0]
        elif term.kind == "product":
            val = parts[0] * parts[1]
        else:
            val = np.sign(parts[0]) * np.sign(parts[1])
        total += term.weight * _standardize(val)
    return _standardize(total)


def score_to_rise(spec: SyntheticUniverseSpec, score: np.ndarray) -> np.ndarray:
    return np.round(spec.rise_scale * np.exp(spec.rise_spread * score)).astype(np.int64)


def cases_from_drivers(g: np.ndarray, initial: np.ndarray) -> np.ndarray:
    """Cumulative cases [C, D] whose weekly rise at day d is 7 * base + g[d - 7]."""
    D, C = g.shape
    gp = np.concatenate([np.zeros((8, C), dtype=np.int64), g], axis=0)  # gp[x + 8] = g[x]
    h = np.zeros((D, C), dtype=np.int64)
    for x in range(D):
        h[x] = gp[x + 1] - gp[x]  # g[x-7] - g[x-8]
    walk = h.copy()
    for x in range(7, D):
        walk[x] += walk[x - 7]
    base = max(0, -int(walk.min()))
    new = base + walk
    return (initial[:, None] + np.cumsum(new.T, axis=1)).astype(np.int64)


def generate_synthetic(spec: SyntheticUniverseSpec) -> Universe:
    C, D = spec.counties, spec.days
    counties = [f"c{i:03d}" for i in range(C)]
    groups = _raw_groups(spec)

    score = planted_score(spec, groups)
    noise = np.stack([rngmod.substream(spec.seed, f"{rngmod.DATA}.noise", c).normal(size=D) for c in range(C)], axis=1)
    drivers = score_to_rise(spec, score + spec.noise * noise)
    initial = np.array([rngmod.substream(spec.seed, f"{rngmod.DATA}.initial", c).integers(20, 500) for c in range(C)])
    cases = cases_from_drivers(drivers, initial)

    cells = []
    for c in range(C):
        r = rngmod.substream(spec.seed, f"{rngmod.DATA}.grid", c)
        lattice = r.choice(100, size=spec.grid_cells, replace=False)
        xy = np.stack([2.0 * (lattice % 10), 2.0 * (lattice // 10)], axis=1)
        s = np.exp(r.normal(size=(D, spec.grid_cells)))
        for d in range(D):
            for k in range(spec.grid_cells):
                cells.append((c, d, xy[k, 0], xy[k, 1], s[d, k]))
    arr = np.array(cells)
    grid = ActivityGrid(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2:4], arr[:, 4])

    if "cross_county" in groups and "source_cumulative_cases" in groups["cross_county"].features:
        cc = groups["cross_county"]
        j = cc.features.index("source_cumulative_cases")
        cc.values[..., j] = np.log1p(cases.T)[:, :, None]
    ordered = {}
    for name in ("census", "vulnerability"):
        if name in groups:
            ordered[name] = groups[name]
    ordered["past_rise"] = case_features(cases)
    ordered["reproduction_number"] = r0_features(cases)
    ordered["venables_distance"] = venables_features(grid, C, D)
    for name in ("social_distancing", "visitation", "cross_county"):
        if name in groups:
            ordered[name] = groups[name]

    meta = {"generator": spec.to_dict()}
    return Universe(dt.date.fromisoformat(spec.start_date), counties, cases, ordered, grid, meta)


def oracle_classes(spec: SyntheticUniverseSpec, u: Universe, boundaries, label_days: np.ndarray, county: np.ndarray) -> np.ndarray:
    """Classes a noise-free reading of the planted score would give (Bayes-style reference)."""
    from .ordinal import assign_class

    score = planted_score(spec, {k: v for k, v in u.groups.items() if not v.derived})
    clean = score_to_rise(spec, score)
    base = u.cases[county, label_days] - u.cases[county, label_days - 7] - _drivers_at(spec, u, label_days, county)
    return np.asarray(assign_class(clean[label_days - 7, county] + base, boundaries))


def _drivers_at(spec: SyntheticUniverseSpec, u: Universe, label_days: np.ndarray, county: np.ndarray) -> np.ndarray:
    score = planted_score(spec, {k: v for k, v in u.groups.items() if not v.derived})
    noise = np.stack([rngmod.substream(spec.seed, f"{rngmod.DATA}.noise", c).normal(size=spec.days) for c in range(spec.counties)], axis=1)
    drivers = score_to_rise(spec, score + spec.noise * noise)
    return drivers[label_days - 7, county]
