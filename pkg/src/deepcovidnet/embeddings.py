"""Equidimensional embeddings for the three feature-group kinds.

Every function works on a batch: the leading axis of the input is the sample
axis. Weight sharing follows the group structure: one feature-mixing matrix
``W^F`` is applied at every time step (and county), then ``W^C`` mixes counties
and ``W^T`` mixes time steps, each per embedding unit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, Parameter, Var

CONSTANT = "constant"
TIME_DEPENDENT = "time_dependent"
CROSS_COUNTY = "cross_county"
KINDS = (CONSTANT, TIME_DEPENDENT, CROSS_COUNTY)


class DataError(KeyError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    """Static description of one feature group."""

    name: str
    kind: str
    features: tuple[str, ...]
    t: int = 1
    c: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"group {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        if self.kind == CONSTANT:
            return (self.n,)
        if self.kind == TIME_DEPENDENT:
            return (self.t, self.n)
        return (self.t, self.c, self.n)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "features": list(self.features), "t": self.t, "c": self.c}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroupSpec":
        return cls(d["name"], d["kind"], tuple(d["features"]), int(d.get("t", 1)), int(d.get("c", 1)))


def init_group_weights(spec: GroupSpec, e: int, rng: np.random.Generator) -> dict[str, Parameter]:
    """LeCun-normal weights for one group; only the constant-group layer has a bias."""
    n = spec.n
    if spec.kind == CONSTANT:
        return {
            "W": Parameter(nc.lecun_normal(rng, n, (n, e))),
            "b": Parameter(np.zeros(e)),
        }
    weights = {"WF": Parameter(nc.lecun_normal(rng, n, (n, e)))}
    if spec.kind == CROSS_COUNTY:
        weights["WC"] = Parameter(nc.lecun_normal(rng, spec.c, (spec.c, e)))
    weights["WT"] = Parameter(nc.lecun_normal(rng, spec.t, (spec.t, e)))
    return weights


def embed_constant(x: Var, W: Var, b: Var, act: str = "selu") -> Var:
    """[B, n] -> [B, e]."""
    return nc.dense(x, W, b, act)


def embed_time_dependent(F: Var, WF: Var, WT: Var, act: str = "selu") -> Var:
    """[B, t, n] -> [B, e].

    Each time step gets a per-unit feature score ``sigma(F[i] @ WF)``; the
    scores are then combined over time with ``WT`` unit by unit.
    """
    if F.ndim != 3 or F.shape[2] != WF.shape[0] or F.shape[1] != WT.shape[0]:
        raise DimensionError(f"time-dependent embedding: F {F.shape}, WF {WF.shape}, WT {WT.shape}")
    sigma = nc.activation(act)
    scores = sigma(nc.einsum("btn,ne->bte", F, WF))
    return sigma(nc.einsum("bte,te->be", scores, WT))


def embed_cross_county(F: Var, WF: Var, WC: Var, WT: Var, act: str = "selu") -> Var:
    """[B, t, c, n] -> [B, e]: feature score per (time, county), county mix, time mix."""
    if F.ndim != 4:
        raise DimensionError(f"cross-county embedding expects [B, t, c, n], got {F.shape}")
    _, t, c, n = F.shape
    if n != WF.shape[0] or t != WT.shape[0]:
        raise DimensionError(f"cross-county embedding: F {F.shape}, WF {WF.shape}, WT {WT.shape}")
    if c != WC.shape[0]:
        raise DimensionError(f"cross-county embedding: county axis {c} != registry size {WC.shape[0]}")
    sigma = nc.activation(act)
    scores = sigma(nc.einsum("btcn,ne->btce", F, WF))
    per_time = sigma(nc.einsum("btce,ce->bte", scores, WC))
    return sigma(nc.einsum("bte,te->be", per_time, WT))


def embed_group(spec: GroupSpec, x: Var, w: Mapping[str, Var], act: str = "selu") -> Var:
    expected = spec.sample_shape
    if tuple(x.shape[1:]) != expected:
        raise DimensionError(f"group {spec.name!r}: expected per-sample shape {expected}, got {tuple(x.shape[1:])}")
    if spec.kind == CONSTANT:
        return embed_constant(x, w["W"], w["b"], act)
    if spec.kind == TIME_DEPENDENT:
        return embed_time_dependent(x, w["WF"], w["WT"], act)
    return embed_cross_county(x, w["WF"], w["WC"], w["WT"], act)


def embed_all(
    tape: nc.Tape,
    registry: list[GroupSpec],
    sample: Mapping[str, np.ndarray | Var],
    weights: Mapping[str, Mapping[str, Parameter]],
    act: str = "selu",
) -> list[Var]:
    """One embedding per registered group, in registry order."""
    out = []
    for spec in registry:
        if spec.name not in sample:
            raise DataError(f"feature group {spec.name!r} missing from sample")
        x = tape.lift(sample[spec.name])
        w = {k: tape.param(p, f"{spec.name}.{k}") for k, p in weights[spec.name].items()}
        out.append(embed_group(spec, x, w, act))
    return out
