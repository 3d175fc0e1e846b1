"""Permutation-based importance reports and group interaction magnitudes."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .embeddings import CONSTANT
from .features import Dataset
from .model import DeepCOVIDNet

EVAL_FRACTION = 0.2
REPEATS = 5


@dataclass(frozen=True)
class ImportanceRow:
    group: str
    feature: str
    randomized_accuracy: float
    drop: float


@dataclass
class ImportanceReport:
    baseline: float
    rows: list[ImportanceRow] = field(default_factory=list)

    def ranking(self) -> list[str]:
        return [f"{r.group}/{r.feature}" for r in self.rows]

    def drop_of(self, ref: str) -> float:
        for r in self.rows:
            if f"{r.group}/{r.feature}" == ref:
                return r.drop
        raise KeyError(ref)


@dataclass
class TimeStepReport:
    baseline: float
    offsets: list[int]
    randomized_accuracy: list[float]

    @property
    def drops(self) -> list[float]:
        return [self.baseline - a for a in self.randomized_accuracy]


@dataclass
class InteractionMatrix:
    groups: list[str]
    values: np.ndarray

    def long_rows(self) -> list[tuple[str, str, float]]:
        g = len(self.groups)
        return [(self.groups[i], self.groups[j], float(self.values[i, j])) for i in range(g) for j in range(i + 1, g)]

    def top_pair(self) -> tuple[str, str]:
        a, b, _ = max(self.long_rows(), key=lambda r: r[2])
        return a, b


def eval_subset(ds: Dataset, seed: int, fraction: float = EVAL_FRACTION) -> Dataset:
    """Seed-pinned random subset of ``ds`` (at least one sample)."""
    r = rngmod.substream(seed, rngmod.ANALYSIS, 0)
    k = max(1, int(round(fraction * len(ds))))
    return ds.subset(np.sort(r.choice(len(ds), size=k, replace=False)))


def _check(eval_set: Dataset, repeats: int) -> None:
    if len(eval_set) == 0:
        raise ValueError("evaluation set is empty")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")


def permutation_importance(model: DeepCOVIDNet, eval_set: Dataset, rng: np.random.Generator, repeats: int = REPEATS) -> ImportanceReport:
    """Accuracy drop when each feature is shuffled across samples; sorted by drop."""
    _check(eval_set, repeats)
    baseline = model.accuracy(eval_set.inputs, eval_set.classes)
    n = len(eval_set)
    rows = []
    for spec in model.registry:
        x = eval_set.inputs[spec.name]
        for j, feat in enumerate(spec.features):
            accs = []
            for _ in range(repeats):
                shuffled = x.copy()
                shuffled[..., j] = x[rng.permutation(n)][..., j]
                accs.append(model.accuracy({**eval_set.inputs, spec.name: shuffled}, eval_set.classes))
            acc = float(np.mean(accs))
            rows.append(ImportanceRow(spec.name, feat, acc, baseline - acc))
    # stable sort keeps registry order on ties
    rows.sort(key=lambda r: -r.drop)
    return ImportanceReport(baseline, rows)


def timestep_importance(model: DeepCOVIDNet, eval_set: Dataset, rng: np.random.Generator, repeats: int = REPEATS) -> TimeStepReport:
    """Accuracy drop when one past day is shuffled in every time-indexed group.

    Offset 1 is the most recent input day.
    """
    _check(eval_set, repeats)
    groups = [s for s in model.registry if s.kind != CONSTANT]
    if not groups:
        raise ValueError("model has no time-indexed groups")
    t = groups[0].t
    baseline = model.accuracy(eval_set.inputs, eval_set.classes)
    n = len(eval_set)
    accs = []
    for offset in range(1, t + 1):
        k = t - offset
        runs = []
        for _ in range(repeats):
            perm = rng.permutation(n)
            inputs = dict(eval_set.inputs)
            for s in groups:
                x = inputs[s.name].copy()
                x[:, k] = eval_set.inputs[s.name][perm, k]
                inputs[s.name] = x
            runs.append(model.accuracy(inputs, eval_set.classes))
        accs.append(float(np.mean(runs)))
    return TimeStepReport(baseline, list(range(1, t + 1)), accs)


def interaction_magnitudes(model: DeepCOVIDNet, eval_set: Dataset) -> InteractionMatrix:
    """Mean |dot(E_i, E_j)| over the evaluation set; zero diagonal."""
    if len(eval_set) == 0:
        raise ValueError("evaluation set is empty")
    names = [s.name for s in model.registry]
    mags = np.abs(model.interaction_values(eval_set.inputs)).mean(axis=0)
    m = np.zeros((len(names), len(names)))
    for (i, j), v in zip(_pairs(len(names)), mags):
        m[i, j] = m[j, i] = v
    return InteractionMatrix(names, m)


def _pairs(g: int):
    return [(i, j) for i in range(g) for j in range(i + 1, g)]


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def report_tables(report) -> tuple[str, list[str], list[tuple], dict]:
    """(file stem, CSV header, CSV rows, JSON payload) for one report."""
    if isinstance(report, ImportanceReport):
        rows = [(r.group, r.feature, report.baseline, r.randomized_accuracy, r.drop) for r in report.rows]
        header = ["group", "feature", "baseline_accuracy", "randomized_accuracy", "drop"]
        payload = {"baseline_accuracy": report.baseline, "features": [dict(zip(header, r)) for r in rows]}
        return "importance", header, rows, payload
    if isinstance(report, TimeStepReport):
        rows = [(o, report.baseline, a, report.baseline - a) for o, a in zip(report.offsets, report.randomized_accuracy)]
        header = ["offset", "baseline_accuracy", "randomized_accuracy", "drop"]
        payload = {"baseline_accuracy": report.baseline, "timesteps": [dict(zip(header, r)) for r in rows]}
        return "timesteps", header, rows, payload
    if isinstance(report, InteractionMatrix):
        rows = report.long_rows()
        header = ["group_i", "group_j", "value"]
        payload = {"groups": report.groups, "matrix": report.values.tolist(), "pairs": [dict(zip(header, r)) for r in rows]}
        return "interactions", header, rows, payload
    raise TypeError(f"unknown report type {type(report).__name__}")


def emit_reports(reports, out_dir: str | Path) -> list[Path]:
    """Write ``<name>.csv`` and ``<name>.json`` for each report; returns the paths."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            stem, header, rows, payload = report_tables(report)
            csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
            csv_path.write_text(_csv_text(header, rows))
            json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
            written += [csv_path, json_path]
    except OSError as exc:
        raise OSError(f"cannot write reports to {out_dir}: {exc.strerror or exc}") from exc
    return written
