"""Ordinal county-level forecasting of weekly case rises.

Feature groups are embedded to equal-size vectors. Their pairwise dot products
pass through a self-normalizing network, and the head maps that output plus the
summed embeddings to exceedance probabilities over class boundaries.
"""
from .features import SplitSpec, build_samples
from .model import DeepCOVIDNet, ModelConfig
from .ordinal import ClassBoundaries, derive_boundaries
from .synthetic import SyntheticUniverseSpec, bundled_spec, generate_synthetic
from .training import Hyperparams, train, train_two_step

__version__ = "0.1.0"

__all__ = [
    "ClassBoundaries",
    "DeepCOVIDNet",
    "Hyperparams",
    "ModelConfig",
    "SplitSpec",
    "SyntheticUniverseSpec",
    "build_samples",
    "bundled_spec",
    "derive_boundaries",
    "generate_synthetic",
    "train",
    "train_two_step",
]
