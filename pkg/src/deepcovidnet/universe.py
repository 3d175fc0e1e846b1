"""In-memory county universe and its on-disk CSV layout.

Layout of a universe directory::

    registry.json                 group specs, county order, date span
    cases.csv                     county,date,cumulative
    constant/<group>.csv          county,<features...>
    timedep/<group>.csv           county,date,<features...>
    crosscounty/<group>.csv       date,source,dest,<features...>
    grid.csv                      county,date,cell_x_km,cell_y_km,intensity
"""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import CONSTANT, CROSS_COUNTY, KINDS, TIME_DEPENDENT

FORMAT_VERSION = 1
_KIND_DIRS = {CONSTANT: "constant", TIME_DEPENDENT: "timedep", CROSS_COUNTY: "crosscounty"}


@dataclass
class GroupData:
    """Raw values of one group: constant [C, n], time-dependent [D, C, n], cross-county [D, C_src, C_dst, n]."""

    name: str
    kind: str
    features: tuple[str, ...]
    values: np.ndarray
    derived: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"group {self.name!r}: unknown kind {self.kind!r}")
        self.features = tuple(self.features)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-1] != len(self.features):
            raise ValueError(f"group {self.name!r}: {len(self.features)} feature names for values {self.values.shape}")


@dataclass
class ActivityGrid:
    """Long-format activity cells: one row per (county, day, cell)."""

    county: np.ndarray
    day: np.ndarray
    xy: np.ndarray
    intensity: np.ndarray

    def cells(self, county: int, day: int) -> tuple[np.ndarray, np.ndarray]:
        m = (self.county == county) & (self.day == day)
        return self.xy[m], self.intensity[m]


@dataclass
class Universe:
    start: dt.date
    counties: list[str]
    cases: np.ndarray  # [C, D] cumulative confirmed cases
    groups: dict[str, GroupData]
    grid: ActivityGrid | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_days(self) -> int:
        return self.cases.shape[1]

    @property
    def n_counties(self) -> int:
        return len(self.counties)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(self.n_days)]

    def day_index(self, date: dt.date | str) -> int:
        if isinstance(date, str):
            date = dt.date.fromisoformat(date)
        i = (date - self.start).days
        if not 0 <= i < self.n_days:
            raise KeyError(f"date {date} outside universe span")
        return i

    def group_table(self) -> list[dict]:
        return [{"name": g.name, "kind": g.kind, "features": list(g.features), "derived": g.derived} for g in self.groups.values()]

    def summary(self) -> str:
        return f"{self.n_counties} counties, {self.n_days} days from {self.start.isoformat()}, {len(self.groups)} groups"


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def save_universe(u: Universe, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = [d.isoformat() for d in u.dates]
    registry = {
        "version": FORMAT_VERSION,
        "start_date": u.start.isoformat(),
        "days": u.n_days,
        "counties": list(u.counties),
        "groups": u.group_table(),
        "meta": u.meta,
    }
    (out / "registry.json").write_text(json.dumps(registry, indent=2, sort_keys=True) + "\n")
    _write_csv(
        out / "cases.csv",
        ["county", "date", "cumulative"],
        ((c, dates[d], int(u.cases[ci, d])) for ci, c in enumerate(u.counties) for d in range(u.n_days)),
    )
    for g in u.groups.values():
        path = out / _KIND_DIRS[g.kind] / f"{g.name}.csv"
        feats = list(g.features)
        if g.kind == CONSTANT:
            rows = ([c, *map(_fmt, g.values[ci])] for ci, c in enumerate(u.counties))
            _write_csv(path, ["county", *feats], rows)
        elif g.kind == TIME_DEPENDENT:
            rows = (
                [c, dates[d], *map(_fmt, g.values[d, ci])] for ci, c in enumerate(u.counties) for d in range(u.n_days)
            )
            _write_csv(path, ["county", "date", *feats], rows)
        else:
            rows = (
                [dates[d], s, t, *map(_fmt, g.values[d, si, ti])]
                for d in range(u.n_days)
                for si, s in enumerate(u.counties)
                for ti, t in enumerate(u.counties)
            )
            _write_csv(path, ["date", "source", "dest", *feats], rows)
    if u.grid is not None:
        gr = u.grid
        rows = (
            [u.counties[gr.county[i]], dates[gr.day[i]], _fmt(gr.xy[i, 0]), _fmt(gr.xy[i, 1]), _fmt(gr.intensity[i])]
            for i in range(len(gr.county))
        )
        _write_csv(out / "grid.csv", ["county", "date", "cell_x_km", "cell_y_km", "intensity"], rows)
    return out


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def load_universe(path: str | Path) -> Universe:
    root = Path(path)
    reg_path = root / "registry.json"
    if not reg_path.exists():
        raise FileNotFoundError(f"no registry.json in {root}")
    reg = json.loads(reg_path.read_text())
    if int(reg.get("version", 0)) != FORMAT_VERSION:
        raise ValueError(f"{reg_path}: unsupported universe version {reg.get('version')}")
    start = dt.date.fromisoformat(reg["start_date"])
    counties = list(reg["counties"])
    D, C = int(reg["days"]), len(counties)
    cidx = {c: i for i, c in enumerate(counties)}

    def day(s: str) -> int:
        return (dt.date.fromisoformat(s) - start).days

    cases = np.zeros((C, D), dtype=np.int64)
    _, rows = _read_rows(root / "cases.csv")
    for county, date, cum in rows:
        cases[cidx[county], day(date)] = int(cum)

    groups = {}
    for spec in reg["groups"]:
        name, kind, feats = spec["name"], spec["kind"], tuple(spec["features"])
        header, rows = _read_rows(root / _KIND_DIRS[kind] / f"{name}.csv")
        n = len(feats)
        if header[-n:] != list(feats):
            raise ValueError(f"{name}.csv header {header} does not match registry features {list(feats)}")
        if kind == CONSTANT:
            values = np.zeros((C, n))
            for row in rows:
                values[cidx[row[0]]] = [float(v) for v in row[1:]]
        elif kind == TIME_DEPENDENT:
            values = np.zeros((D, C, n))
            for row in rows:
                values[day(row[1]), cidx[row[0]]] = [float(v) for v in row[2:]]
        else:
            values = np.zeros((D, C, C, n))
            for row in rows:
                values[day(row[0]), cidx[row[1]], cidx[row[2]]] = [float(v) for v in row[3:]]
        groups[name] = GroupData(name, kind, feats, values, derived=bool(spec.get("derived", False)))

    grid = None
    if (root / "grid.csv").exists():
        _, rows = _read_rows(root / "grid.csv")
        grid = ActivityGrid(
            county=np.array([cidx[r[0]] for r in rows], dtype=np.int64),
            day=np.array([day(r[1]) for r in rows], dtype=np.int64),
            xy=np.array([[float(r[2]), float(r[3])] for r in rows]).reshape(-1, 2),
            intensity=np.array([float(r[4]) for r in rows]),
        )
    return Universe(start, counties, cases, groups, grid, reg.get("meta", {}))
