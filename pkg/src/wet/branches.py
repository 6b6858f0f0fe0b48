"""The two model branches.

The text branch projects token embeddings to model width, adds the
length-aware positional table, and runs several parallel transformer blocks
(relative-bias attention, directional gating, feed-forward) whose pooled
outputs form the per-branch representations. The feature branch arranges the
auxiliary signals as a short sequence, embeds each scalar with an LSTM plus a
fixed positional table, gates it, and encodes it with sparse-attention/LSTM
layers into a single representation.

Padding is handled by compaction: padded positions are dropped before any
computation, so they can never leak into attention weights, gate pooling, or
the pooled representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MultiHeadAttention, ProbSparseConfig
from .config import ModelConfig
from .ela import ELAParams, FeatureMap, ela_forward
from .encodings import PositionalEncodingSpec, feature_branch_pe, tape_pe
from .nn import LSTM, Activation, Dense, LayerNorm, dropout, prefixed
from .tensor import ShapeError, Tensor

FEATURE_MAGNITUDE_LIMIT = 50.0  # unstandardized engagement counts trip this


@dataclass
class EmbeddedSequence:
    """Token embeddings [L, d_emb] with a validity mask (True = real token)."""

    tokens: Tensor
    pad_mask: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError("token embeddings must be 2-D")
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        if self.pad_mask.shape != (self.tokens.shape[0],):
            raise ShapeError("pad mask length must match the token count")

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[0]


@dataclass
class SupervisedWindow:
    """Lag/forecast arrangement of a [channels, samples] record."""

    x_lagged: np.ndarray
    x_forecast: np.ndarray
    x_transformed: np.ndarray
    label: int | None = None


@dataclass
class BranchOutputs:
    text_reps: list
    feature_rep: Tensor


def supervised_transform(
    record: np.ndarray, window: int, n_in: int, n_out: int
) -> SupervisedWindow:
    """Arrange a record into backward-shifted and forward-shifted windows.

    The record is [S, samples]; each shift contributes a width-`window`
    block. Lagged blocks cover the `n_in` windows before the anchor
    (chronological order), forecast blocks the `n_out` windows after it, and
    the transformed part is their horizontal concatenation with shape
    (S, window * (n_in + n_out)).
    """
    record = np.asarray(record, dtype=float)
    if record.ndim != 2:
        raise ValueError("record must be [channels, samples]")
    if window < 1 or n_in < 0 or n_out < 0:
        raise ValueError("window must be >=1 and shift counts nonnegative")
    needed = window * (n_in + n_out)
    if record.shape[1] < needed:
        raise ValueError(
            f"record has {record.shape[1]} samples, needs {needed} for "
            f"window={window}, n_in={n_in}, n_out={n_out}"
        )
    anchor = window * n_in
    lag_blocks = [
        record[:, anchor - k * window : anchor - (k - 1) * window]
        for k in range(n_in, 0, -1)
    ]
    fc_blocks = [
        record[:, anchor + (m - 1) * window : anchor + m * window]
        for m in range(1, n_out + 1)
    ]
    s = record.shape[0]
    x_lagged = np.hstack(lag_blocks) if lag_blocks else np.zeros((s, 0))
    x_forecast = np.hstack(fc_blocks) if fc_blocks else np.zeros((s, 0))
    return SupervisedWindow(x_lagged, x_forecast, np.hstack([x_lagged, x_forecast]))


def lstm_embed(cell: LSTM, x: Tensor) -> Tensor:
    """Per-step LSTM hidden states with the fixed positional table added."""
    hidden = cell(x)
    return hidden + feature_branch_pe(x.shape[0], cell.d_hidden)


class TextBlock:
    """One transformer block: relative-bias attention, gating, feed-forward,
    with post-norm residuals around the attention and feed-forward sublayers."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.mha = MultiHeadAttention(
            d, cfg.heads, kind="erpe", rng=rng, max_len=cfg.max_seq_len
        )
        self.ln1 = LayerNorm(d)
        self.ln2 = LayerNorm(d)
        self.ela = ELAParams(
            d,
            reduction=cfg.ela_reduction,
            activation=cfg.activation,
            rng=rng,
            corrected_mean=cfg.ela_corrected_mean,
            include_joint=False,
        )
        self.ff1 = Dense(d, cfg.ffn_mult * d, rng)
        self.ff2 = Dense(cfg.ffn_mult * d, d, rng)
        self.act = Activation(cfg.activation)
        self.rate = cfg.dropout

    def __call__(
        self, x: Tensor, positions: np.ndarray, training: bool, rng
    ) -> Tensor:
        d_model, length = x.shape[1], x.shape[0]
        attended = self.mha(x, positions=positions)
        if training:
            attended = dropout(attended, self.rate, training, rng)
        x = self.ln1(x + attended)

        fm = FeatureMap(x.T.reshape(d_model, length, 1))
        x = ela_forward(fm, self.ela).x.reshape(d_model, length).T

        ff = self.ff2(self.act(self.ff1(x)))
        if training:
            ff = dropout(ff, self.rate, training, rng)
        return self.ln2(x + ff)

    def parameters(self) -> dict:
        out = {}
        for name, mod in (
            ("mha", self.mha),
            ("ln1", self.ln1),
            ("ln2", self.ln2),
            ("ela", self.ela),
            ("ff1", self.ff1),
            ("ff2", self.ff2),
            ("act", self.act),
        ):
            out.update(prefixed(name, mod.parameters()))
        return out

    def buffers(self) -> dict:
        return prefixed("ela", self.ela.buffers())


class TextBranch:
    """Parallel transformer blocks over projected token embeddings; each
    block pools to one representation. Blocks share input, not parameters:
    their independent random initializations are the diversity source."""

    def __init__(self, cfg: ModelConfig, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        children = seed_seq.spawn(cfg.n_text_layers + 2)
        self.proj = Dense(cfg.d_emb, cfg.d_model, np.random.default_rng(children[0]))
        self.blocks = [
            TextBlock(cfg, np.random.default_rng(children[1 + i]))
            for i in range(cfg.n_text_layers)
        ]
        self.rep_proj = (
            Dense(cfg.d_model, cfg.d_repr, np.random.default_rng(children[-1]))
            if cfg.d_repr != cfg.d_model
            else None
        )

    def __call__(self, seq: EmbeddedSequence, training: bool = False, rng=None) -> list:
        if seq.seq_len > self.cfg.max_seq_len:
            raise ShapeError(
                f"sequence length {seq.seq_len} exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        valid = np.flatnonzero(seq.pad_mask)
        if valid.size == 0:
            raise ShapeError("sequence has no unpadded positions")
        tokens = seq.tokens[valid] if valid.size < seq.seq_len else seq.tokens
        n = valid.size
        positions = np.arange(n)

        x = self.proj(tokens)
        spec = PositionalEncodingSpec("tape", n, self.cfg.d_model, base=self.cfg.pe_base)
        x = x + tape_pe(spec)

        reps = []
        for block in self.blocks:
            h = block(x, positions, training, rng)
            rep = h.mean(axis=0)
            if self.rep_proj is not None:
                rep = self.rep_proj(rep.reshape(1, -1)).reshape(-1)
            reps.append(rep)
        return reps

    def parameters(self) -> dict:
        out = prefixed("proj", self.proj.parameters())
        for i, block in enumerate(self.blocks):
            out.update(prefixed(f"block{i}", block.parameters()))
        if self.rep_proj is not None:
            out.update(prefixed("rep_proj", self.rep_proj.parameters()))
        return out

    def buffers(self) -> dict:
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(prefixed(f"block{i}", block.buffers()))
        return out


class FeatureEncoderLayer:
    """Sparse-attention then LSTM then ELU, preserving [L, d_model]."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.mha = MultiHeadAttention(
            cfg.d_model,
            cfg.heads,
            kind="prob_sparse",
            rng=rng,
            sparse_cfg=ProbSparseConfig(cfg.probsparse_factor),
        )
        self.lstm = LSTM(cfg.d_model, cfg.d_model, rng)
        self.rate = cfg.dropout

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        attended = self.mha(x)
        if training:
            attended = dropout(attended, self.rate, training, rng)
        return self.lstm(attended).elu()

    def parameters(self) -> dict:
        out = prefixed("mha", self.mha.parameters())
        out.update(prefixed("lstm", self.lstm.parameters()))
        return out


class FeatureBranch:
    """Encodes the auxiliary signal vector into one representation."""

    def __init__(self, cfg: ModelConfig, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        children = seed_seq.spawn(cfg.feature_encoder_depth + 3)
        self.embed_cell = LSTM(1, cfg.d_model, np.random.default_rng(children[0]))
        self.ela = ELAParams(
            cfg.d_model,
            reduction=cfg.ela_reduction,
            activation=cfg.activation,
            rng=np.random.default_rng(children[1]),
            corrected_mean=cfg.ela_corrected_mean,
            include_joint=False,
        )
        self.layers = [
            FeatureEncoderLayer(cfg, np.random.default_rng(children[2 + i]))
            for i in range(cfg.feature_encoder_depth)
        ]
        self.rep_proj = (
            Dense(cfg.d_model, cfg.d_repr, np.random.default_rng(children[-1]))
            if cfg.d_repr != cfg.d_model
            else None
        )

    def arrange(self, values: np.ndarray) -> Tensor:
        """Lag/forecast arrangement of the feature vector as a [L, 1] sequence."""
        values = np.asarray(values, dtype=float)
        window = self.cfg.lag_window or values.size
        win = supervised_transform(
            values.reshape(1, -1), window, self.cfg.n_in, self.cfg.n_out
        )
        return Tensor(win.x_transformed.T)

    def __call__(self, values: np.ndarray, training: bool = False, rng=None) -> Tensor:
        values = np.asarray(values, dtype=float)
        if np.any(np.abs(values) > FEATURE_MAGNITUDE_LIMIT):
            raise ValueError(
                "feature vector looks unstandardized "
                f"(|x| > {FEATURE_MAGNITUDE_LIMIT}); run feature extraction first"
            )
        x = self.arrange(values)
        x = lstm_embed(self.embed_cell, x)

        d_model, length = x.shape[1], x.shape[0]
        fm = FeatureMap(x.T.reshape(d_model, length, 1))
        x = ela_forward(fm, self.ela).x.reshape(d_model, length).T

        for layer in self.layers:
            x = layer(x, training, rng)
        rep = x.mean(axis=0)
        if self.rep_proj is not None:
            rep = self.rep_proj(rep.reshape(1, -1)).reshape(-1)
        return rep

    def parameters(self) -> dict:
        out = prefixed("embed", self.embed_cell.parameters())
        out.update(prefixed("ela", self.ela.parameters()))
        for i, layer in enumerate(self.layers):
            out.update(prefixed(f"layer{i}", layer.parameters()))
        if self.rep_proj is not None:
            out.update(prefixed("rep_proj", self.rep_proj.parameters()))
        return out

    def buffers(self) -> dict:
        return prefixed("ela", self.ela.buffers())
