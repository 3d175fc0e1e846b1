"""Command-line entry point: ``deepcovidnet <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis, artifact
from . import rng as rngmod
from .features import HORIZON, WINDOW, SplitSpec, build_samples, model_registry, window_inputs
from .ordinal import DEFAULT_PERCENTILES
from .synthetic import SyntheticUniverseSpec, bundled_spec, generate_synthetic
from .training import Hyperparams, full_gradient_check, train, train_two_step
from .tuning import bayes_opt, trial_rows
from .universe import load_universe, save_universe

log = logging.getLogger("deepcovidnet")


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, _):
        pass


def configure_logging(level: str) -> None:
    log.setLevel(level)
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)

EVAL_SPLITS = ("train", "val", "test")

HP_FLAGS = {
    "e": ("--e", int),
    "snn_depth": ("--snn-depth", int),
    "snn_width": ("--snn-width", int),
    "dropout_rate": ("--dropout", float),
    "learning_rate": ("--lr", float),
    "batch_size": ("--batch-size", int),
    "lambda_ce": ("--lambda-ce", float),
    "epochs_max": ("--epochs", int),
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Settings shared by all commands; loaded from ``--config`` JSON, then overridden by flags."""

    universe: str | None = None
    artifact: str | None = None
    reports: str | None = None
    split: dict = field(default_factory=lambda: {"fractions": [0.68, 0.12, 0.20]})
    hyperparams: dict = field(default_factory=dict)
    budget: int = 30
    percentiles: list[float] = field(default_factory=lambda: list(DEFAULT_PERCENTILES))
    window: int = WINDOW
    horizon: int = HORIZON
    repeats: int = analysis.REPEATS
    eval_split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if "fractions" in self.split:
            fr = self.split["fractions"]
            if len(fr) != 3 or abs(sum(fr) - 1.0) > 1e-9:
                raise ValueError(f"split fractions must be three numbers summing to 1, got {fr}")
        elif not {"train", "val", "test"} <= set(self.split):
            raise ValueError("split needs either 'fractions' or explicit 'train'/'val'/'test' date ranges")
        Hyperparams.from_dict(self.hyperparams)
        if self.eval_split not in EVAL_SPLITS:
            raise ValueError(f"eval_split must be one of {list(EVAL_SPLITS)}, got {self.eval_split!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"{path}: unknown config field(s) {sorted(unknown)}")
        return cls(**d)

    def split_spec(self, label_dates) -> SplitSpec:
        if "fractions" in self.split:
            return SplitSpec.from_fractions(label_dates, tuple(self.split["fractions"]))
        return SplitSpec.from_dict(self.split)

    def hp(self) -> Hyperparams:
        return Hyperparams.from_dict(self.hyperparams)


# ---------------------------------------------------------------- helpers


def _resolve(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for attr in ("universe", "budget", "repeats", "eval_split"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, attr, v)
    hp = dict(cfg.hyperparams)
    for name in HP_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            hp[name] = v
    cfg.hyperparams = hp
    cfg.__post_init__()
    return cfg


def _universe(cfg: RunConfig):
    if not cfg.universe:
        raise UsageError("no universe given (use --universe or the config file)")
    if not Path(cfg.universe).is_dir():
        raise UsageError(f"universe directory not found: {cfg.universe}")
    return load_universe(cfg.universe)


def _artifact_path(args) -> Path:
    p = Path(args.artifact)
    if not p.is_file():
        raise UsageError(f"artifact not found: {p}")
    return p


def _check_registry(model, u) -> None:
    window = int(model.meta.get("window", WINDOW))
    want = [s.to_dict() for s in model.registry]
    have = [s.to_dict() for s in model_registry(u, window)]
    if want != have:
        lines = ["artifact and universe feature groups differ:"]
        for i in range(max(len(want), len(have))):
            a = want[i] if i < len(want) else None
            b = have[i] if i < len(have) else None
            if a != b:
                lines.append(f"  artifact: {a}\n  universe: {b}")
        raise ValueError("\n".join(lines))


def _write_rows(path: str | Path, header: list[str], rows) -> None:
    if str(path) == "-":
        fh = sys.stdout
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fit_and_save(cfg: RunConfig, ds, split: SplitSpec, hp: Hyperparams, epochs: int, out: Path):
    model = train_two_step(ds, hp, split, epochs, cfg.seed)
    model.meta.update({"window": cfg.window, "horizon": cfg.horizon, "percentiles": list(cfg.percentiles)})
    artifact.save(model, out)
    log.info("wrote %s (%d epochs on train+val)", out, epochs)
    return model


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    src = Path(args.spec)
    spec = SyntheticUniverseSpec.from_json(src) if src.suffix == ".json" or src.exists() else bundled_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    u = generate_synthetic(spec)
    out = save_universe(u, args.out)
    kinds = ", ".join(f"{g.name} ({g.kind})" for g in u.groups.values())
    print(f"{u.summary()}; wrote {out}\ngroups: {kinds}", file=sys.stderr)
    return 0


def _prepare(cfg: RunConfig):
    u = _universe(cfg)
    ds = build_samples(u, cfg.window, cfg.horizon, percentiles=cfg.percentiles)
    split = cfg.split_spec(ds.dates())
    log.info("%d samples, boundaries %s, split %s", len(ds), ds.boundaries.to_list(), split.to_dict())
    return u, ds, split


def _report_files(out: Path, rows: list[dict], stem: str) -> None:
    if not rows:
        return
    _write_rows(out.with_name(f"{out.stem}.{stem}.csv"), list(rows[0]), [[r[k] for k in rows[0]] for r in rows])


def cmd_train(args) -> int:
    cfg = _resolve(args)
    hp = cfg.hp()
    if hp.learning_rate == 0:
        log.warning("learning rate is 0; parameters will stay at their initial values")
    _, ds, split = _prepare(cfg)
    report = train(ds, hp, split, cfg.seed)
    log.info("step one: best epoch %d, validation accuracy %.4f", report.best_epoch, report.best_val_accuracy)
    out = Path(args.out)
    _fit_and_save(cfg, ds, split, hp, report.best_epoch, out)
    _report_files(out, report.rows(), "report")
    return 0


def cmd_tune(args) -> int:
    cfg = _resolve(args)
    _, ds, split = _prepare(cfg)
    best, epochs, trials = bayes_opt(ds, split, cfg.budget, cfg.seed, base=cfg.hp())
    out = Path(args.out)
    rows = trial_rows(trials)
    header = sorted({k for r in rows for k in r}, key=lambda k: (k not in ("trial", "phase", "value", "epochs"), k))
    _write_rows(out.parent / "tune_trials.csv", header, [[r.get(k, "") for k in header] for r in rows])
    log.info("best trial: %s, %d epochs", best.to_dict(), epochs)
    _fit_and_save(cfg, ds, split, best, epochs, out)
    return 0


def _parse_dates(text: str | None, u) -> list[dt.date]:
    if not text:
        return list(u.dates)
    out = []
    for part in text.split(","):
        if ":" in part:
            lo, hi = (dt.date.fromisoformat(x) for x in part.split(":"))
            out += [lo + dt.timedelta(days=i) for i in range((hi - lo).days + 1)]
        else:
            out.append(dt.date.fromisoformat(part))
    return out


def cmd_predict(args) -> int:
    cfg = _resolve(args)
    model = artifact.load(_artifact_path(args))
    u = _universe(cfg)
    _check_registry(model, u)
    window = int(model.meta.get("window", WINDOW))
    horizon = int(model.meta.get("horizon", HORIZON))
    if args.counties:
        names = args.counties.split(",")
        missing = [c for c in names if c not in u.counties]
        if missing:
            raise ValueError(f"unknown counties: {missing}")
        cidx = [u.counties.index(c) for c in names]
    else:
        cidx = list(range(u.n_counties))
    days = []
    for d in _parse_dates(args.dates, u):
        i = (d - u.start).days
        if i - horizon - window + 1 < 0 or i - horizon >= u.n_days:
            log.warning("skipping %s: no complete %d-day input window", d, window)
            continue
        days.append(i)
    county = np.repeat(np.array(cidx, dtype=np.int64), len(days))
    day = np.tile(np.array(days, dtype=np.int64), len(cidx))
    inputs = window_inputs(u, model.registry, county, day, window, horizon)
    pred = model.predict(inputs) if len(county) else None
    ranges = model.boundaries.ranges()
    header = ["county", "date", *[f"p_class{k}" for k in range(model.boundaries.n_classes)], "predicted_class", "range"]
    rows = []
    for i in range(len(county)):
        k = int(pred.predicted_class[i])
        date = (u.start + dt.timedelta(days=int(day[i]))).isoformat()
        rows.append([u.counties[county[i]], date, *[repr(float(p)) for p in pred.class_probs[i]], k, ranges[k]])
    _write_rows(args.out, header, rows)
    return 0


def _analysis_set(cfg: RunConfig, model, u):
    _check_registry(model, u)
    window = int(model.meta.get("window", WINDOW))
    horizon = int(model.meta.get("horizon", HORIZON))
    ds = build_samples(u, window, horizon, boundaries=model.boundaries)
    if "split" in model.meta:
        ds = SplitSpec.from_dict(model.meta["split"]).partition(ds)[cfg.eval_split]
    elif cfg.eval_split != "train":
        raise ValueError(f"artifact records no split, so --eval-split {cfg.eval_split} is unavailable")
    if len(ds) == 0:
        raise ValueError(f"the {cfg.eval_split} split has no samples in this universe")
    # held-out splits are used whole; the training split is subsampled
    return analysis.eval_subset(ds, cfg.seed) if cfg.eval_split == "train" else ds


def _run_analysis(args, which: str) -> int:
    cfg = _resolve(args)
    model = artifact.load(_artifact_path(args))
    u = _universe(cfg)
    ev = _analysis_set(cfg, model, u)
    r = rngmod.substream(cfg.seed, rngmod.ANALYSIS, 1)
    if which == "importance":
        report = analysis.permutation_importance(model, ev, r, cfg.repeats)
    elif which == "timesteps":
        report = analysis.timestep_importance(model, ev, r, cfg.repeats)
    else:
        report = analysis.interaction_magnitudes(model, ev)
    if args.out == "-":
        _, header, rows, _ = analysis.report_tables(report)
        _write_rows("-", header, [[analysis._fmt(v) for v in row] for row in rows])
    else:
        for p in analysis.emit_reports([report], args.out):
            log.info("wrote %s", p)
    return 0


def cmd_check_grads(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = full_gradient_check(seed=seed, e=args.e or 8, tolerance=args.tolerance)
    for name, err in sorted(report.max_rel_err.items(), key=lambda kv: -kv[1]):
        log.info("%-28s %.3e", name, err)
    status = "passed" if report.passed else "FAILED"
    print(f"gradient check {status}: max relative error {report.worst:.3e} (tolerance {report.tolerance:g})", file=sys.stderr)
    if args.out:
        payload = {"passed": report.passed, "tolerance": report.tolerance, "max_rel_err": report.max_rel_err}
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if args.out == "-":
            sys.stdout.write(text)
        else:
            Path(args.out).write_text(text)
    return 0 if report.passed else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = argparse.ArgumentParser(prog="deepcovidnet", description="Ordinal county-level case-rise forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic universe")
    g.add_argument("spec", help="spec JSON path or bundled name (desk_small, main_effect, recent_day, pairwise_product)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    def universe_flag(sp):
        sp.add_argument("--universe", help="universe directory")

    def hp_flags(sp):
        for name, (flag, typ) in HP_FLAGS.items():
            sp.add_argument(flag, dest=name, type=typ)

    t = sub.add_parser("train", parents=[common], help="two-step training with fixed hyperparameters")
    universe_flag(t)
    hp_flags(t)
    t.add_argument("--out", required=True, help="artifact path")
    t.set_defaults(func=cmd_train)

    tu = sub.add_parser("tune", parents=[common], help="Bayesian tuning, then two-step training")
    universe_flag(tu)
    hp_flags(tu)
    tu.add_argument("--budget", type=int, help="tuning iterations (default 30)")
    tu.add_argument("--out", required=True, help="artifact path; tune_trials.csv goes beside it")
    tu.set_defaults(func=cmd_tune)

    pr = sub.add_parser("predict", parents=[common], help="class distributions for county/date pairs")
    pr.add_argument("--artifact", required=True)
    universe_flag(pr)
    pr.add_argument("--dates", help="comma list of ISO dates or START:END ranges (default: every date)")
    pr.add_argument("--counties", help="comma list of county ids (default: all)")
    pr.add_argument("--out", default="-", help="CSV path, or - for stdout")
    pr.set_defaults(func=cmd_predict)

    for name in ("importance", "timesteps", "interactions"):
        a = sub.add_parser(name, parents=[common], help=f"{name} analysis report")
        a.add_argument("--artifact", required=True)
        universe_flag(a)
        if name != "interactions":
            a.add_argument("--repeats", type=int, help="shuffles per feature or day (default 5)")
        a.add_argument(
            "--eval-split",
            choices=EVAL_SPLITS,
            help="evaluate on a 20%% subset of the training split (default) or on the whole val/test split",
        )
        a.add_argument("--out", required=True, help="report directory, or - for CSV on stdout")
        a.set_defaults(func=lambda args, n=name: _run_analysis(args, n))

    c = sub.add_parser("check-grads", parents=[common], help="finite-difference gradient check of the full model")
    c.add_argument("--e", type=int, help="embedding size (default 8)")
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.add_argument("--out", help="JSON report path, or - for stdout")
    c.set_defaults(func=cmd_check_grads)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deepcovidnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, IndexError, OSError, RuntimeError) as exc:
        print(f"deepcovidnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
