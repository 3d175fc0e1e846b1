"""DeepCOVIDNet: embedding module + interaction head + ordinal output."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numcore as nc
from . import rng as rngmod
from .embeddings import CONSTANT, GroupSpec, embed_group, init_group_weights
from .interaction import (
    SnnConfig,
    head_logits,
    head_width,
    init_head,
    init_snn,
    pair_indices,
    pairwise_interactions,
    snn_forward,
    sum_embeddings,
)
from .numcore import Parameter, Tape, Var
from .ordinal import ClassBoundaries, predict_class, to_class_distribution

STD_FLOOR = 1e-8


@dataclass
class Normalizer:
    """Per-feature standardization fitted on training inputs."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    @classmethod
    def fit(cls, registry: list[GroupSpec], inputs: Mapping[str, np.ndarray]) -> "Normalizer":
        mean, std = {}, {}
        for spec in registry:
            x = inputs[spec.name]
            flat = x.reshape(-1, spec.n)
            mean[spec.name] = flat.mean(axis=0)
            std[spec.name] = np.maximum(flat.std(axis=0), STD_FLOOR)
        return cls(mean, std)

    @classmethod
    def identity(cls, registry: list[GroupSpec]) -> "Normalizer":
        return cls({s.name: np.zeros(s.n) for s in registry}, {s.name: np.ones(s.n) for s in registry})

    def apply(self, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: (np.asarray(v, dtype=np.float64) - self.mean[k]) / self.std[k] for k, v in inputs.items() if k in self.mean}


@dataclass
class ForwardResult:
    embeddings: list[Var]
    interactions: Var
    snn_out: Var
    emb_sum: Var
    logits: Var
    probs: Var


@dataclass
class OrdinalPrediction:
    binary_probs: np.ndarray
    class_probs: np.ndarray
    predicted_class: np.ndarray


@dataclass
class ModelConfig:
    registry: list[GroupSpec]
    n_out: int
    e: int = 8
    act: str = "selu"
    snn: SnnConfig = field(default_factory=SnnConfig)
    head_hidden: int | None = None

    @property
    def hidden(self) -> int:
        return self.head_hidden or head_width(self.n_out)

    @property
    def head_in(self) -> int:
        g = len(self.registry)
        return g * (g - 1) // 2 + self.snn.width + self.e

    def to_dict(self) -> dict:
        return {
            "registry": [s.to_dict() for s in self.registry],
            "n_out": self.n_out,
            "e": self.e,
            "act": self.act,
            "snn": {"depth": self.snn.depth, "width": self.snn.width, "dropout_rate": self.snn.dropout_rate},
            "head_hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            [GroupSpec.from_dict(s) for s in d["registry"]],
            int(d["n_out"]),
            int(d["e"]),
            d["act"],
            SnnConfig(**d["snn"]),
            int(d["head_hidden"]),
        )


class DeepCOVIDNet:
    def __init__(self, config: ModelConfig, seed: int = 0, boundaries: ClassBoundaries | None = None):
        if len(config.registry) < 2:
            raise ValueError("need at least two feature groups for pairwise interactions")
        self.config = config
        self.boundaries = boundaries
        self.normalizer = Normalizer.identity(config.registry)
        self.meta: dict = {}
        init = rngmod.substream(seed, rngmod.INIT)
        e = config.e
        self.group_weights = {s.name: init_group_weights(s, e, init) for s in config.registry}
        self.snn_layers = init_snn(len(config.registry) * e, config.snn, init)
        self.head = init_head(config.head_in, config.hidden, config.n_out, init)

    @property
    def registry(self) -> list[GroupSpec]:
        return self.config.registry

    @property
    def params(self) -> dict[str, Parameter]:
        out = {}
        for g, ws in self.group_weights.items():
            for k, p in ws.items():
                out[f"emb.{g}.{k}"] = p
        for i, layer in enumerate(self.snn_layers):
            for k, p in layer.items():
                out[f"snn.{i}.{k}"] = p
        for k, p in self.head.items():
            out[f"head.{k}"] = p
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.params
        if set(state) != set(params):
            raise KeyError(f"state keys differ from model parameters: {sorted(set(state) ^ set(params))}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"{k}: shape {v.shape} != {p.value.shape}")
            p.value = v.copy()
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------------ forward

    def forward(self, tape: Tape, inputs: Mapping[str, np.ndarray], training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        """Forward pass on already-normalized inputs."""
        act = self.config.act
        embs = []
        for spec in self.registry:
            if spec.name not in inputs:
                raise KeyError(f"feature group {spec.name!r} missing from inputs")
            x = tape.lift(inputs[spec.name])
            w = {k: tape.param(p, f"{spec.name}.{k}") for k, p in self.group_weights[spec.name].items()}
            embs.append(embed_group(spec, x, w, act))
        ix = pairwise_interactions(embs)
        layers = [{k: tape.param(p) for k, p in layer.items()} for layer in self.snn_layers]
        snn_out = snn_forward(embs, layers, self.config.snn, training, rng)
        emb_sum = sum_embeddings(embs)
        head = {k: tape.param(p) for k, p in self.head.items()}
        logits = head_logits(ix, snn_out, emb_sum, head)
        return ForwardResult(embs, ix, snn_out, emb_sum, logits, nc.sigmoid(logits))

    def _batches(self, inputs: Mapping[str, np.ndarray], batch: int = 1024):
        n = len(next(iter(inputs.values())))
        norm = self.normalizer.apply(inputs)
        for lo in range(0, n, batch):
            yield {k: v[lo : lo + batch] for k, v in norm.items()}

    def binary_probs(self, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
        out = [self.forward(Tape(), b).probs.value for b in self._batches(inputs)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_out))

    def predict(self, inputs: Mapping[str, np.ndarray]) -> OrdinalPrediction:
        p = self.binary_probs(inputs)
        q = to_class_distribution(p) if len(p) else np.zeros((0, self.config.n_out + 1))
        return OrdinalPrediction(p, q, predict_class(q))

    def predict_classes(self, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.predict(inputs).predicted_class

    def interaction_values(self, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
        """[N, g(g-1)/2] pairwise dot products of group embeddings."""
        out = [self.forward(Tape(), b).interactions.value for b in self._batches(inputs)]
        return np.concatenate(out)

    def pairs(self) -> list[tuple[str, str]]:
        names = [s.name for s in self.registry]
        return [(names[i], names[j]) for i, j in pair_indices(len(names))]

    def accuracy(self, inputs: Mapping[str, np.ndarray], classes: np.ndarray) -> float:
        if len(classes) == 0:
            return float("nan")
        return float(np.mean(self.predict_classes(inputs) == classes))

    def time_groups(self) -> list[GroupSpec]:
        return [s for s in self.registry if s.kind != CONSTANT]

