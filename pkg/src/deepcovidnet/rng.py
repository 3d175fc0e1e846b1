"""Named random substreams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np

DATA, INIT, DROPOUT, SHUFFLE, ANALYSIS, TUNING = "data", "init", "dropout", "shuffle", "analysis", "tuning"


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, name, keys); stable across runs and platforms."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *(int(k) for k in keys)])
