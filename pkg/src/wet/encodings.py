"""Positional encoding constructors.

Three flavors: the classic sinusoidal table, the length-aware variant whose
frequencies are rescaled by d_model/L (tAPE), and the fixed table used by the
feature branch, which raises pos/(2L) to a per-dimension power before the
sinusoid. All are pure functions of their spec and return untracked tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

ENCODING_KINDS = ("sinusoidal", "tape", "feature_branch_fixed")

# frequency base for the sin/cos tables; the standard transformer uses 10000,
# this model family uses 1000
DEFAULT_PE_BASE = 1000.0


@dataclass(frozen=True)
class PositionalEncodingSpec:
    kind: str
    seq_len: int
    d_model: int
    base: float = DEFAULT_PE_BASE

    def __post_init__(self):
        if self.kind not in ENCODING_KINDS:
            raise ValueError(f"unknown encoding kind {self.kind!r}")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.d_model < 2 or self.d_model % 2 != 0:
            raise ValueError("d_model must be a positive even integer")


def _sin_cos_table(seq_len: int, freqs: np.ndarray) -> np.ndarray:
    pos = np.arange(seq_len, dtype=float)[:, None]
    angles = pos * freqs[None, :]
    table = np.empty((seq_len, 2 * freqs.size))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def sinusoidal_pe(spec: PositionalEncodingSpec) -> Tensor:
    """Absolute table: entry (i, 2k) = sin(i * w_k), (i, 2k+1) = cos(i * w_k),
    with w_k = base^(-2k / d_model)."""
    k = np.arange(spec.d_model // 2, dtype=float)
    freqs = spec.base ** (-2.0 * k / spec.d_model)
    return Tensor(_sin_cos_table(spec.seq_len, freqs))


def tape_pe(spec: PositionalEncodingSpec) -> Tensor:
    """Length-aware table: same layout with frequencies w_k * d_model / L,
    which keeps the vectors distance-sensitive across sequence lengths."""
    k = np.arange(spec.d_model // 2, dtype=float)
    freqs = spec.base ** (-2.0 * k / spec.d_model) * (spec.d_model / spec.seq_len)
    return Tensor(_sin_cos_table(spec.seq_len, freqs))


def feature_branch_pe(seq_len: int, d_model: int) -> Tensor:
    """Fixed feature-branch table: the sinusoid argument is
    (pos / (2L))^(2j / d_model), applied as printed (0^0 == 1)."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if d_model < 2 or d_model % 2 != 0:
        raise ValueError("d_model must be a positive even integer")
    pos = np.arange(seq_len, dtype=float)[:, None]
    j = np.arange(d_model // 2, dtype=float)[None, :]
    args = (pos / (2.0 * seq_len)) ** (2.0 * j / d_model)
    table = np.empty((seq_len, d_model))
    table[:, 0::2] = np.sin(args)
    table[:, 1::2] = np.cos(args)
    return Tensor(table)
