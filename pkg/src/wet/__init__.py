"""Weighted ensemble transformer for binary text classification.

A from-scratch numpy implementation: reverse-mode tensor core, attention
variants (scaled dot-product, learnable relative bias, sparse query
selection), directional gating, a dual-branch model with a weighted ensemble
head, and the surrounding data pipeline, training harness, metrics, and
ablation runner.
"""

__version__ = "0.1.0"

from .tensor import Tensor, finite_difference_check, matmul, softmax_rows
from .config import ModelConfig, RunConfig
from .ensemble import (
    WetModel,
    average_outputs,
    derive_weights,
    load_checkpoint,
    save_checkpoint,
    train,
    weighted_combine,
    wet_forward,
)

__all__ = [
    "Tensor",
    "ModelConfig",
    "RunConfig",
    "WetModel",
    "average_outputs",
    "weighted_combine",
    "derive_weights",
    "train",
    "wet_forward",
    "save_checkpoint",
    "load_checkpoint",
    "matmul",
    "softmax_rows",
    "finite_difference_check",
    "__version__",
]
