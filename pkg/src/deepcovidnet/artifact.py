"""Self-describing JSON model artifact."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from filelock import FileLock

from .model import DeepCOVIDNet, ModelConfig, Normalizer
from .ordinal import ClassBoundaries

FORMAT = "deepcovidnet-artifact"
VERSION = "1.0"


class ArtifactError(ValueError):
    pass


def _array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    # json writes floats with repr, which round-trips float64 exactly
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarray(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def to_dict(model: DeepCOVIDNet) -> dict:
    if model.boundaries is None:
        raise ArtifactError("model has no class boundaries")
    meta = {k: v for k, v in model.meta.items() if k != "hyperparams"}
    return {
        "format": FORMAT,
        "version": VERSION,
        "hyperparams": model.meta.get("hyperparams", {}),
        "model": model.config.to_dict(),
        "boundaries": model.boundaries.to_list(),
        "normalization": {
            name: {"mean": _array(model.normalizer.mean[name]), "std": _array(model.normalizer.std[name])} for name in model.normalizer.mean
        },
        "weights": {k: _array(v) for k, v in model.state().items()},
        "meta": meta,
    }


def from_dict(d: dict) -> DeepCOVIDNet:
    if d.get("format") != FORMAT:
        raise ArtifactError(f"not a model artifact (format={d.get('format')!r})")
    version = str(d.get("version", ""))
    major = version.split(".")[0]
    if major != VERSION.split(".")[0]:
        raise ArtifactError(f"unsupported artifact version {version!r}; this loader reads {VERSION.split('.')[0]}.x")
    config = ModelConfig.from_dict(d["model"])
    model = DeepCOVIDNet(config, seed=0, boundaries=ClassBoundaries(tuple(d["boundaries"])))
    model.normalizer = Normalizer(
        {k: _unarray(v["mean"]) for k, v in d["normalization"].items()},
        {k: _unarray(v["std"]) for k, v in d["normalization"].items()},
    )
    model.load_state({k: _unarray(v) for k, v in d["weights"].items()})
    model.meta = dict(d.get("meta", {}))
    model.meta["hyperparams"] = d.get("hyperparams", {})
    return model


def dumps(model: DeepCOVIDNet) -> str:
    return json.dumps(to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def save(model: DeepCOVIDNet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps(model)
    with FileLock(str(path) + ".lock"):
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
    return path


def load(path: str | Path) -> DeepCOVIDNet:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return from_dict(d)
