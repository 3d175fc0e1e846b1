"""DeepFM-style head: explicit pairwise interactions plus a self-normalizing network."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import ConfigError, DimensionError, Parameter, Var


@dataclass(frozen=True)
class SnnConfig:
    depth: int = 2
    width: int = 64
    dropout_rate: float = 0.05

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ConfigError(f"SNN needs depth >= 1 and width >= 1, got {self.depth}, {self.width}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")


def pair_indices(g: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(g) for j in range(i + 1, g)]


def _check_equal(embs: Sequence[Var]):
    lengths = {e.shape[-1] for e in embs}
    if len(lengths) != 1:
        raise DimensionError(f"embeddings have unequal lengths {sorted(lengths)}")


def pairwise_interactions(embs: Sequence[Var]) -> Var:
    """[B, g(g-1)/2] dot products, ordered (0,1), (0,2), ..., (g-2,g-1)."""
    if len(embs) < 2:
        raise DimensionError("pairwise interactions need at least two embeddings")
    _check_equal(embs)
    E = nc.stack(embs, axis=1)
    gram = nc.einsum("bge,bhe->bgh", E, E)
    rows, cols = np.triu_indices(len(embs), k=1)
    return gram[:, rows, cols]


def sum_embeddings(embs: Sequence[Var]) -> Var:
    _check_equal(embs)
    total = embs[0]
    for e in embs[1:]:
        total = total + e
    return total


def init_snn(in_dim: int, cfg: SnnConfig, rng: np.random.Generator) -> list[dict[str, Parameter]]:
    layers = []
    for _ in range(cfg.depth):
        layers.append({"W": Parameter(nc.lecun_normal(rng, in_dim, (in_dim, cfg.width))), "b": Parameter(np.zeros(cfg.width))})
        in_dim = cfg.width
    return layers


def snn_forward(
    embs: Sequence[Var],
    layers: Sequence[dict[str, Var]],
    cfg: SnnConfig,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Var:
    h = nc.concat(list(embs), axis=-1)
    for layer in layers:
        h = nc.dense(h, layer["W"], layer["b"], "selu")
        h = nc.alpha_dropout(h, cfg.dropout_rate, training, rng)
    return h


def head_width(n_out: int) -> int:
    return max(32, 4 * n_out)


def init_head(in_dim: int, hidden: int, n_out: int, rng: np.random.Generator) -> dict[str, Parameter]:
    return {
        "W1": Parameter(nc.lecun_normal(rng, in_dim, (in_dim, hidden))),
        "b1": Parameter(np.zeros(hidden)),
        "W2": Parameter(nc.lecun_normal(rng, hidden, (hidden, n_out))),
        "b2": Parameter(np.zeros(n_out)),
    }


def head_logits(ix: Var, snn_out: Var, emb_sum: Var, head: dict[str, Var]) -> Var:
    x = nc.concat([ix, snn_out, emb_sum], axis=-1)
    if x.shape[-1] != head["W1"].shape[0]:
        raise DimensionError(f"head input dim {x.shape[-1]} != configured {head['W1'].shape[0]}")
    hidden = nc.dense(x, head["W1"], head["b1"], "selu")
    return nc.dense(hidden, head["W2"], head["b2"])


def head_forward(ix: Var, snn_out: Var, emb_sum: Var, head: dict[str, Var]) -> Var:
    """Exceedance probabilities P(rise >= C_i), one per class boundary."""
    return nc.sigmoid(head_logits(ix, snn_out, emb_sum, head))
