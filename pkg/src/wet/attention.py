"""Attention kernels: scaled dot-product, learnable relative bias, and
dispersion-based sparse query selection, plus the multi-head wrapper.

Conventions: inputs are single sequences (no batch axis), Q/K/V are 2-D
tensors sharing the sequence length, and all kernels are pure apart from the
learnable bias tables and projection weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Dense
from .tensor import ShapeError, Tensor, concat, softmax_rows


@dataclass
class AttentionInputs:
    q: Tensor
    k: Tensor
    v: Tensor

    def __post_init__(self):
        if self.q.ndim != 2 or self.k.ndim != 2 or self.v.ndim != 2:
            raise ShapeError("attention inputs must be 2-D")
        if self.q.shape[1] != self.k.shape[1]:
            raise ShapeError("Q and K must share the key dimension")
        if not (self.q.shape[0] == self.k.shape[0] == self.v.shape[0]):
            raise ShapeError("self-attention requires equal sequence lengths")
        if self.q.shape[1] == 0:
            raise ShapeError("key dimension must be positive")

    @property
    def seq_len(self) -> int:
        return self.q.shape[0]

    @property
    def d_k(self) -> int:
        return self.q.shape[1]


class RelativeBiasTable:
    """Learnable scalar bias per relative offset i-j in [-(L-1), L-1].

    The table starts at zero so attention begins exactly at the unbiased
    kernel and learns positional preferences from there.
    """

    def __init__(self, seq_len: int):
        if seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        self.seq_len = seq_len
        self.w = Tensor(np.zeros(2 * seq_len - 1), requires_grad=True)

    def __len__(self):
        return self.w.shape[0]

    def matrix(self, positions: np.ndarray) -> Tensor:
        """Bias matrix B[i, j] = w[p_i - p_j + L - 1] for position vector p."""
        offsets = positions[:, None] - positions[None, :]
        max_off = self.seq_len - 1
        if np.any(np.abs(offsets) > max_off):
            raise ShapeError("relative offset exceeds the bias table range")
        return self.w.take_flat(offsets + max_off)

    def parameters(self) -> dict:
        return {"w": self.w}


@dataclass
class ProbSparseConfig:
    """Controls how many queries keep their full attention rows."""

    sampling_factor: float = 5.0

    def __post_init__(self):
        if self.sampling_factor <= 0:
            raise ValueError("sampling_factor must be positive")

    def query_count(self, seq_len: int) -> int:
        u = math.ceil(self.sampling_factor * math.log(seq_len)) if seq_len > 1 else 1
        return max(1, min(seq_len, u))


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def fused_softmax_attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """softmax(q k^T / scale) v as a single graph node."""
    weights = _softmax(q.data @ k.data.T / scale)

    def bwd(g):
        d_weights = g @ v.data.T
        d_scores = (d_weights - (d_weights * weights).sum(axis=1, keepdims=True)) * weights
        return d_scores @ k.data / scale, d_scores.T @ q.data / scale, weights.T @ g

    return Tensor.from_op(weights @ v.data, (q, k, v), bwd)


def scaled_dot_attention(inp: AttentionInputs) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V."""
    return fused_softmax_attention(inp.q, inp.k, inp.v, math.sqrt(inp.d_k))


def kernel_attention(inp: AttentionInputs, kernel=None) -> np.ndarray:
    """Kernel-smoother form: sum_j k(q_i, k_j) / sum_l k(q_i, k_l) * v_j.

    Reference (non-differentiating) formulation; with the exponential kernel
    it coincides with scaled_dot_attention.
    """
    q, k, v = inp.q.data, inp.k.data, inp.v.data
    if kernel is None:
        scale = math.sqrt(inp.d_k)
        kernel = lambda qi, kj: math.exp(float(qi @ kj) / scale)
    weights = np.array([[kernel(qi, kj) for kj in k] for qi in q])
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


def erpe_attention(
    inp: AttentionInputs,
    bias: RelativeBiasTable,
    positions: np.ndarray | None = None,
    renormalize: bool = False,
) -> Tensor:
    """Attention with a trainable scalar bias added to the post-softmax
    weights: out_i = sum_j (softmax(QK^T/sqrt(d_k))_ij + w_{i-j}) V_j.

    The biased rows no longer sum to one; `renormalize` restores that at the
    cost of departing from the plain additive form.
    """
    L = inp.seq_len
    if positions is None:
        if len(bias) != 2 * L - 1:
            raise ShapeError(f"bias table has length {len(bias)}, expected {2 * L - 1}")
        positions = np.arange(L)
    if renormalize:
        weights = softmax_rows((inp.q @ inp.k.T) / math.sqrt(inp.d_k))
        weights = weights + bias.matrix(np.asarray(positions))
        weights = weights / weights.sum(axis=1, keepdims=True)
        return weights @ inp.v

    # fused single-node form of (softmax + bias) @ V
    q, k, v, w = inp.q, inp.k, inp.v, bias.w
    offsets = np.asarray(positions)[:, None] - np.asarray(positions)[None, :]
    if np.any(np.abs(offsets) > bias.seq_len - 1):
        raise ShapeError("relative offset exceeds the bias table range")
    idx = offsets + bias.seq_len - 1
    scale = math.sqrt(inp.d_k)
    soft = _softmax(q.data @ k.data.T / scale)
    combined = soft + w.data[idx]

    def bwd(g):
        d_weights = g @ v.data.T
        dw = np.zeros_like(w.data)
        np.add.at(dw, idx, d_weights)
        d_scores = (d_weights - (d_weights * soft).sum(axis=1, keepdims=True)) * soft
        return (
            d_scores @ k.data / scale,
            d_scores.T @ q.data / scale,
            combined.T @ g,
            dw,
        )

    return Tensor.from_op(combined @ v.data, (q, k, v, w), bwd)


def prob_sparse_measure(inp: AttentionInputs) -> np.ndarray:
    """Query dispersion M(q_i, K) = ln sum_j exp(s_ij) - mean_j exp(s_ij),
    with s_ij = q_i k_j^T / sqrt(2).

    The log-sum term is max-stabilized; the raw mean-of-exponentials term is
    evaluated in extended precision because the formula wants the plain mean.
    """
    scores = (inp.q.data @ inp.k.data.T) / math.sqrt(2.0)
    m = scores.max(axis=1, keepdims=True)
    log_sum = m[:, 0] + np.log(np.exp(scores - m).sum(axis=1))
    mean_exp = np.exp(scores.astype(np.longdouble)).mean(axis=1)
    return np.asarray(log_sum - mean_exp, dtype=float)


def prob_sparse_attention(inp: AttentionInputs, cfg: ProbSparseConfig | None = None) -> Tensor:
    """Full attention rows for the u most dispersed queries; the remaining
    rows fall back to the column mean of V (the uniform-attention limit)."""
    cfg = cfg or ProbSparseConfig()
    L = inp.seq_len
    u = cfg.query_count(L)
    measure = prob_sparse_measure(inp)
    selected = np.sort(np.argsort(-measure, kind="stable")[:u])

    q_sel = inp.q if u == L else inp.q[selected]
    attended = fused_softmax_attention(q_sel, inp.k, inp.v, math.sqrt(inp.d_k))
    if u == L:
        return attended

    scatter = np.zeros((L, u))
    scatter[selected, np.arange(u)] = 1.0
    lazy = np.ones((L, 1))
    lazy[selected] = 0.0
    v_mean = inp.v.mean(axis=0).reshape(1, -1)
    return Tensor(scatter) @ attended + Tensor(lazy) @ v_mean


ATTENTION_KINDS = ("scaled_dot", "erpe", "prob_sparse")


class MultiHeadAttention:
    """Per-head projections, independent inner attention, concat, output map.

    `kind` selects the inner kernel; "erpe" gives every head its own bias
    table sized for `max_len`, "prob_sparse" applies the dispersion-based
    query selection per head.
    """

    def __init__(
        self,
        d_model: int,
        heads: int,
        kind: str = "scaled_dot",
        rng: np.random.Generator | None = None,
        max_len: int = 64,
        sparse_cfg: ProbSparseConfig | None = None,
    ):
        if kind not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {kind!r}")
        if d_model % heads != 0:
            raise ShapeError(f"heads {heads} must divide d_model {d_model}")
        rng = rng or np.random.default_rng(0)
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.kind = kind
        self.sparse_cfg = sparse_cfg or ProbSparseConfig()
        self.wq = Dense(d_model, d_model, rng, bias=False)
        self.wk = Dense(d_model, d_model, rng, bias=False)
        self.wv = Dense(d_model, d_model, rng, bias=False)
        self.wo = Dense(d_model, d_model, rng)
        self.bias_tables = (
            [RelativeBiasTable(max_len) for _ in range(heads)] if kind == "erpe" else []
        )

    def _inner(self, head_inp: AttentionInputs, head: int, positions) -> Tensor:
        if self.kind == "scaled_dot":
            return scaled_dot_attention(head_inp)
        if self.kind == "erpe":
            return erpe_attention(head_inp, self.bias_tables[head], positions=positions)
        return prob_sparse_attention(head_inp, self.sparse_cfg)

    def __call__(self, x: Tensor, positions: np.ndarray | None = None) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        if positions is None:
            positions = np.arange(x.shape[0])
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.d_head, (h + 1) * self.d_head)
            head_inp = AttentionInputs(q[:, cols], k[:, cols], v[:, cols])
            outs.append(self._inner(head_inp, h, positions))
        return self.wo(concat(outs, axis=1))

    def parameters(self) -> dict:
        out = {}
        for name, layer in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            for k, t in layer.parameters().items():
                out[f"{name}.{k}"] = t
        for h, table in enumerate(self.bias_tables):
            out[f"bias{h}.w"] = table.w
        return out
