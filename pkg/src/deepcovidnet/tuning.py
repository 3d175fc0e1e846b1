"""Bayesian hyperparameter search: GP surrogate with expected improvement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from . import rng as rngmod
from .features import Dataset, SplitSpec
from .training import Hyperparams, TrainingError, train

log = logging.getLogger(__name__)

JITTER = 1e-8
N_INITIAL = 5
N_CANDIDATES = 1024
LENGTH_SCALES = np.geomspace(0.05, 5.0, 25)


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dim:
    """One search dimension; ``scale`` is "int", "float" or "log"."""

    name: str
    low: float
    high: float
    scale: str = "float"

    def __post_init__(self):
        if self.scale not in ("int", "float", "log"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if not self.high > self.low or (self.scale == "log" and self.low <= 0):
            raise ValueError(f"bad bounds for {self.name}: [{self.low}, {self.high}]")

    def decode(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "log":
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        v = self.low + u * (self.high - self.low)
        return int(round(v)) if self.scale == "int" else float(v)

    def encode(self, v) -> float:
        if self.scale == "log":
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (float(v) - self.low) / (self.high - self.low)


@dataclass
class SearchSpace:
    dims: list[Dim]
    pinned: dict = field(default_factory=dict)

    def __post_init__(self):
        clash = {d.name for d in self.dims} & set(self.pinned)
        if clash:
            raise ValueError(f"dimension(s) both searched and pinned: {sorted(clash)}")
        if not self.dims:
            raise ValueError("search space has no free dimensions")

    @property
    def d(self) -> int:
        return len(self.dims)

    def decode(self, u: np.ndarray) -> dict:
        out = dict(self.pinned)
        out.update({dim.name: dim.decode(x) for dim, x in zip(self.dims, u)})
        return out

    def snap(self, u: np.ndarray) -> np.ndarray:
        """Unit point of the decoded (rounded) configuration."""
        point = self.decode(u)
        return np.array([dim.encode(point[dim.name]) for dim in self.dims])


def default_space(**pinned) -> SearchSpace:
    dims = [
        Dim("e", 4, 64, "int"),
        Dim("snn_depth", 1, 4, "int"),
        Dim("snn_width", 16, 256, "int"),
        Dim("dropout_rate", 0.0, 0.2),
        Dim("learning_rate", 1e-4, 1e-2, "log"),
        Dim("lambda_ce", 0.0, 2.0),
    ]
    return SearchSpace([d for d in dims if d.name not in pinned], pinned)


def rbf(a: np.ndarray, b: np.ndarray, length: float) -> np.ndarray:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * sq / length**2)


class GpSurrogate:
    """Zero-mean GP on standardized targets with an isotropic RBF kernel.

    The length-scale is picked from a fixed grid by log marginal likelihood.
    """

    def __init__(self, noise: float = 1e-6):
        self.noise = noise
        self.length = 1.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GpSurrogate":
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if len(y) == 0:
            raise TuningError("surrogate needs at least one observation")
        self.mu = y.mean()
        self.sd = y.std() if y.std() > 0 else 1.0
        z = (y - self.mu) / self.sd
        best = -np.inf
        for length in LENGTH_SCALES:
            K = rbf(self.X, self.X, length) + (self.noise + JITTER) * np.eye(len(z))
            cf = cho_factor(K, lower=True)
            alpha = cho_solve(cf, z)
            lml = -0.5 * z @ alpha - np.log(np.diag(cf[0])).sum()
            if lml > best:
                best, self.length, self._cf, self._alpha = lml, float(length), cf, alpha
        return self

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and std in the original target units."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
        Ks = rbf(Xs, self.X, self.length)
        mean = Ks @ self._alpha
        v = cho_solve(self._cf, Ks.T)
        var = np.maximum(1.0 - (Ks * v.T).sum(1), 0.0)
        return self.mu + self.sd * mean, self.sd * np.sqrt(var)


def expected_improvement(mu, s, best: float) -> np.ndarray:
    """EI for maximization; with s = 0 it is the certain gain max(mu - best, 0)."""
    mu, s = np.broadcast_arrays(np.asarray(mu, dtype=np.float64), np.asarray(s, dtype=np.float64))
    gain = np.atleast_1d(mu - best)
    s = np.atleast_1d(s)
    out = np.maximum(gain, 0.0)
    pos = s > 0
    z = gain[pos] / s[pos]
    out[pos] = gain[pos] * norm.cdf(z) + s[pos] * norm.pdf(z)
    out = np.maximum(out, 0.0)
    return out.reshape(mu.shape) if mu.ndim else float(out[0])


@dataclass
class Trial:
    index: int
    params: dict
    value: float
    epochs: int = 0
    phase: str = "random"

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.value)


def maximize(
    objective: Callable[[dict], tuple[float, int] | float],
    space: SearchSpace,
    budget: int = 30,
    seed: int = 0,
) -> list[Trial]:
    """Maximize ``objective`` over ``space``; returns every trial in order.

    The objective returns a score, or ``(score, epochs)``. A non-finite score or
    a raised TrainingError marks the trial failed.
    """
    if budget < N_INITIAL:
        raise ValueError(f"budget must be >= {N_INITIAL}")
    rng = rngmod.substream(seed, rngmod.TUNING)
    design = qmc.LatinHypercube(d=space.d, seed=rng).random(N_INITIAL)
    trials: list[Trial] = []
    for i in range(budget):
        if i < N_INITIAL:
            u, phase = design[i], "random"
        else:
            ok = [t for t in trials if not t.failed]
            if not ok:
                u, phase = rng.uniform(size=space.d), "random"
            else:
                X = np.array([space.snap(np.array([d.encode(t.params[d.name]) for d in space.dims])) for t in ok])
                y = np.array([t.value for t in ok])
                gp = GpSurrogate().fit(X, y)
                cand = rng.uniform(size=(N_CANDIDATES, space.d))
                mu, s = gp.predict(np.array([space.snap(c) for c in cand]))
                u, phase = cand[int(np.argmax(expected_improvement(mu, s, y.max())))], "ei"
        params = space.decode(u)
        try:
            out = objective(params)
        except TrainingError as exc:
            log.warning("trial %d failed: %s", i, exc)
            out = float("nan")
        value, epochs = out if isinstance(out, tuple) else (out, 0)
        trials.append(Trial(i, params, float(value), int(epochs), phase))
        log.info("trial %d (%s) %s -> %.4f", i, phase, params, value)
    if all(t.failed for t in trials):
        raise TuningError("every tuning trial failed")
    return trials


def best_trial(trials: Sequence[Trial]) -> Trial:
    ok = [t for t in trials if not t.failed]
    if not ok:
        raise TuningError("every tuning trial failed")
    # earliest trial wins ties
    return max(ok, key=lambda t: (t.value, -t.index))


def bayes_opt(
    ds: Dataset,
    split: SplitSpec,
    budget: int = 30,
    seed: int = 0,
    base: Hyperparams | None = None,
    space: SearchSpace | None = None,
) -> tuple[Hyperparams, int, list[Trial]]:
    """Tune hyperparameters on validation accuracy; returns (best, its best epoch, trials)."""
    base = base or Hyperparams()
    space = space or default_space()

    def objective(params: dict) -> tuple[float, int]:
        hp = Hyperparams.from_dict({**base.to_dict(), **params})
        report = train(ds, hp, split, seed)
        return report.best_val_accuracy, report.best_epoch

    trials = maximize(objective, space, budget, seed)
    best = best_trial(trials)
    return Hyperparams.from_dict({**base.to_dict(), **best.params}), best.epochs, trials


def trial_rows(trials: Sequence[Trial]) -> list[dict]:
    return [{"trial": t.index, "phase": t.phase, "value": t.value, "epochs": t.epochs, **t.params} for t in trials]
