"""Mini-batch training, model selection on validation accuracy, two-step retraining."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import rng as rngmod
from .features import Dataset, SplitSpec
from .interaction import SnnConfig
from .model import DeepCOVIDNet, ModelConfig, Normalizer
from .numcore import Parameter, Tape
from .ordinal import ordinal_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg: str, epoch: int | None = None):
        super().__init__(msg)
        self.epoch = epoch


@dataclass
class Hyperparams:
    e: int = 8
    snn_depth: int = 2
    snn_width: int = 64
    dropout_rate: float = 0.05
    learning_rate: float = 1e-2
    batch_size: int = 64
    lambda_ce: float = 1.0
    epochs_max: int = 80
    act: str = "selu"

    def __post_init__(self):
        for name in ("e", "snn_depth", "snn_width", "batch_size", "epochs_max"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
            setattr(self, name, int(getattr(self, name)))
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.learning_rate < 0 or self.lambda_ce < 0:
            raise ValueError("learning_rate and lambda_ce must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)

    def model_config(self, ds: Dataset) -> ModelConfig:
        return ModelConfig(
            ds.registry,
            n_out=ds.boundaries.n,
            e=self.e,
            act=self.act,
            snn=SnnConfig(self.snn_depth, self.snn_width, self.dropout_rate),
        )


class Adam:
    def __init__(self, params: dict[str, Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, p in self.params.items():
            if not p.trainable:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * p.grad
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * p.grad**2
            p.value = p.value - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    best_state: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    model: DeepCOVIDNet | None = field(default=None, repr=False)

    @property
    def best_val_accuracy(self) -> float:
        return self.val_accuracy[self.best_epoch - 1] if self.best_epoch else float("nan")

    def rows(self) -> list[dict]:
        return [
            {"epoch": i + 1, "train_loss": self.train_loss[i], "val_accuracy": self.val_accuracy[i] if i < len(self.val_accuracy) else None}
            for i in range(self.epochs_run)
        ]


def new_model(ds: Dataset, hp: Hyperparams, seed: int) -> DeepCOVIDNet:
    model = DeepCOVIDNet(hp.model_config(ds), seed=seed, boundaries=ds.boundaries)
    model.normalizer = Normalizer.fit(ds.registry, ds.inputs)
    return model


def run_epoch(model: DeepCOVIDNet, norm_inputs: dict, classes: np.ndarray, hp: Hyperparams, opt: Adam, shuffle_rng, dropout_rng, epoch: int) -> float:
    n = len(classes)
    order = shuffle_rng.permutation(n)
    params = model.params
    total = 0.0
    for lo in range(0, n, hp.batch_size):
        idx = order[lo : lo + hp.batch_size]
        model.zero_grad()
        tape = Tape()
        out = model.forward(tape, {k: v[idx] for k, v in norm_inputs.items()}, training=True, rng=dropout_rng)
        loss, _, _ = ordinal_loss(out.probs, classes[idx], hp.lambda_ce)
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss in epoch {epoch}", epoch)
        tape.backward(loss)
        if not all(np.all(np.isfinite(p.grad)) for p in params.values()):
            raise TrainingError(f"non-finite gradient in epoch {epoch}", epoch)
        opt.step()
        total += value * len(idx)
    return total / n


def fit(
    train_set: Dataset,
    hp: Hyperparams,
    seed: int,
    epochs: int,
    val_set: Dataset | None = None,
    patience: int | None = None,
) -> TrainReport:
    """Train a fresh model for up to ``epochs`` epochs.

    With a validation set the report keeps the parameters of the epoch with the
    best validation accuracy (earliest on ties) and ``model`` is restored to it.
    """
    if len(train_set) == 0:
        raise TrainingError("empty training split")
    if val_set is not None and len(val_set) == 0:
        raise TrainingError("empty validation split")
    model = new_model(train_set, hp, seed)
    opt = Adam(model.params, hp.learning_rate)
    shuffle_rng = rngmod.substream(seed, rngmod.SHUFFLE)
    dropout_rng = rngmod.substream(seed, rngmod.DROPOUT)
    norm = model.normalizer.apply(train_set.inputs)
    report = TrainReport()
    best = -1.0
    for epoch in range(1, epochs + 1):
        loss = run_epoch(model, norm, train_set.classes, hp, opt, shuffle_rng, dropout_rng, epoch)
        report.train_loss.append(loss)
        report.epochs_run = epoch
        if val_set is not None:
            acc = model.accuracy(val_set.inputs, val_set.classes)
            report.val_accuracy.append(acc)
            if acc > best:
                best, report.best_epoch, report.best_state = acc, epoch, model.state()
            log.debug("epoch %d loss %.4f val %.4f", epoch, loss, acc)
            if patience is not None and epoch - report.best_epoch >= patience:
                break
    if val_set is None:
        report.best_epoch = report.epochs_run
        report.best_state = model.state()
    model.load_state(report.best_state)
    model.meta.update({"seed": seed, "epochs": report.best_epoch, "hyperparams": hp.to_dict()})
    report.model = model
    return report


def train(ds: Dataset, hp: Hyperparams, split: SplitSpec, seed: int = 0, patience: int | None = None) -> TrainReport:
    """Step one: fit on the training split, select the epoch on validation accuracy."""
    parts = split.partition(ds)
    for name, part in parts.items():
        if len(part) == 0:
            raise TrainingError(f"empty {name} split")
    report = fit(parts["train"], hp, seed, hp.epochs_max, parts["val"], patience)
    report.model.meta["split"] = split.to_dict()
    return report


def train_two_step(ds: Dataset, hp: Hyperparams, split: SplitSpec, epochs_from_step1: int, seed: int = 0) -> DeepCOVIDNet:
    """Step two: fresh model on train + validation for exactly ``epochs_from_step1`` epochs."""
    if epochs_from_step1 < 1:
        raise ValueError("epochs_from_step1 must be >= 1")
    parts = split.partition(ds)
    combined = parts["train"].concat(parts["val"])
    report = fit(combined, hp, seed, epochs_from_step1)
    model = report.model
    model.meta.update({"split": split.to_dict(), "train_loss": report.train_loss, "two_step": True})
    return model


def full_gradient_check(seed: int = 0, e: int = 8, batch: int = 4, lambda_ce: float = 1.0, tolerance: float = 1e-5):
    """Finite-difference check of the whole network and combined loss, dropout off.

    Covers every group shape: a constant group alongside a time-dependent and a cross-county one.
    """
    from .embeddings import CONSTANT, CROSS_COUNTY, TIME_DEPENDENT, GroupSpec
    from .numcore import check_gradients
    from .ordinal import ClassBoundaries

    registry = [
        GroupSpec("static", CONSTANT, ("a", "b", "c")),
        GroupSpec("daily", TIME_DEPENDENT, ("x", "y"), t=4),
        GroupSpec("flows", CROSS_COUNTY, ("f", "g"), t=4, c=3),
    ]
    config = ModelConfig(registry, n_out=3, e=e, snn=SnnConfig(depth=2, width=8, dropout_rate=0.0))
    model = DeepCOVIDNet(config, seed=seed, boundaries=ClassBoundaries((1, 13, 93)))
    r = rngmod.substream(seed, rngmod.DATA, 0)
    inputs = {s.name: r.normal(size=(batch, *s.sample_shape)) for s in registry}
    classes = r.integers(0, 4, size=batch)

    def closure():
        out = model.forward(Tape(), inputs, training=False)
        return ordinal_loss(out.probs, classes, lambda_ce)[0]

    return check_gradients(closure, model.params, tolerance=tolerance)
