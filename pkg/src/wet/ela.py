"""Directional gating over feature maps: strip pooling, channel-reducing
joint transform, per-axis sigmoid gates, and multiplicative application.

Two gate paths exist. The batch-norm path runs the concatenated pools
through a joint channel reduction before splitting into height/width gates;
the normalized path (``ela_forward``, the one the model branches use) gates
each direction straight from its own pooled strip through a per-direction
transform and group norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Activation, BatchNorm1d, ChannelTransform, GroupNorm, prefixed
from .tensor import ShapeError, Tensor, concat


@dataclass
class FeatureMap:
    """Dense [channels, height, width] activation block."""

    x: Tensor

    def __post_init__(self):
        if self.x.ndim != 3:
            raise ShapeError(f"feature map must be 3-D, got shape {self.x.shape}")
        if min(self.x.shape) < 1:
            raise ShapeError("feature map dims must all be >= 1")

    @property
    def channels(self):
        return self.x.shape[0]

    @property
    def height(self):
        return self.x.shape[1]

    @property
    def width(self):
        return self.x.shape[2]


def _group_count(channels: int, reduced: int) -> int:
    # target min(16, C/r), dropped to the nearest divisor of C
    g = min(16, reduced)
    while channels % g != 0:
        g -= 1
    return g


class ELAParams:
    """Weights for both gate paths over maps with a fixed channel count."""

    def __init__(
        self,
        channels: int,
        reduction: int = 4,
        activation: str = "leaky_relu",
        rng: np.random.Generator | None = None,
        corrected_mean: bool = False,
        include_joint: bool = True,
    ):
        if channels % reduction != 0:
            raise ValueError(f"reduction {reduction} must divide channels {channels}")
        rng = rng or np.random.default_rng(0)
        reduced = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.corrected_mean = corrected_mean
        # joint path: concat pools -> C/r -> BN -> activation -> per-axis C.
        # Skipped when only the normalized path will run (keeps the trainable
        # set free of parameters no gradient can reach).
        if include_joint:
            self.f1 = ChannelTransform(channels, reduced, rng)
            self.bn = BatchNorm1d(reduced)
            self.delta = Activation(activation)
            self.fh_joint = ChannelTransform(reduced, channels, rng)
            self.fw_joint = ChannelTransform(reduced, channels, rng)
        else:
            self.f1 = self.bn = self.delta = self.fh_joint = self.fw_joint = None
        # normalized path: per-direction C -> C with group norm
        groups = _group_count(channels, reduced)
        self.fh = ChannelTransform(channels, channels, rng)
        self.fw = ChannelTransform(channels, channels, rng)
        self.gn_h = GroupNorm(channels, groups)
        self.gn_w = GroupNorm(channels, groups)

    def parameters(self) -> dict:
        out = {}
        for name, mod in (
            ("f1", self.f1),
            ("bn", self.bn),
            ("fh_joint", self.fh_joint),
            ("fw_joint", self.fw_joint),
            ("fh", self.fh),
            ("fw", self.fw),
            ("gn_h", self.gn_h),
            ("gn_w", self.gn_w),
            ("delta", self.delta),
        ):
            if mod is not None:
                out.update(prefixed(name, mod.parameters()))
        return out

    def buffers(self) -> dict:
        return prefixed("bn", self.bn.state_buffers()) if self.bn is not None else {}


def strip_pool(fm: FeatureMap, corrected_mean: bool = False) -> tuple[Tensor, Tensor]:
    """Average-pool each channel along one full axis per direction.

    The height descriptor sums over width and the width descriptor sums over
    height. The default divides the width sum by H and the height sum by W
    (the transposed denominators this model family prints);
    ``corrected_mean`` swaps in the true means.
    """
    h, w = fm.height, fm.width
    width_sum = fm.x.sum(axis=2)  # [C, H]
    height_sum = fm.x.sum(axis=1)  # [C, W]
    if corrected_mean:
        return width_sum / w, height_sum / h
    return width_sum / h, height_sum / w


def joint_transform(z_h: Tensor, z_w: Tensor, params: ELAParams, training: bool = False) -> Tensor:
    """f = activation(BN(F1([z_h ; z_w]))), concatenated along the spatial axis."""
    if params.f1 is None:
        raise ValueError("params were built without the joint path")
    if z_h.shape[0] != params.channels or z_w.shape[0] != params.channels:
        raise ShapeError("pooled strips do not match the parameter channel count")
    f = params.f1(concat([z_h, z_w], axis=1))
    return params.delta(params.bn(f, training))


def directional_gates(f_h: Tensor, f_w: Tensor, params: ELAParams) -> tuple[Tensor, Tensor]:
    """Sigmoid gates per direction: g_h = sigma(F_h(f_h)), g_w = sigma(F_w(f_w))."""
    if params.fh_joint is None:
        raise ValueError("params were built without the joint path")
    return params.fh_joint(f_h).sigmoid(), params.fw_joint(f_w).sigmoid()


def coordinate_attention_apply(fm: FeatureMap, g_h: Tensor, g_w: Tensor) -> FeatureMap:
    """y[c, i, j] = x[c, i, j] * g_h[c, i] * g_w[c, j]."""
    c, h, w = fm.x.shape
    if g_h.shape != (c, h) or g_w.shape != (c, w):
        raise ShapeError(
            f"gate shapes {g_h.shape}/{g_w.shape} do not match map {fm.x.shape}"
        )
    return FeatureMap(fm.x * g_h.reshape(c, h, 1) * g_w.reshape(c, 1, w))


def coordinate_attention_forward(fm: FeatureMap, params: ELAParams, training: bool = False) -> FeatureMap:
    """Full joint-path chain: pool, joint transform, split, gate, apply."""
    z_h, z_w = strip_pool(fm, params.corrected_mean)
    f = joint_transform(z_h, z_w, params, training)
    f_h = f[:, : fm.height]
    f_w = f[:, fm.height :]
    g_h, g_w = directional_gates(f_h, f_w, params)
    return coordinate_attention_apply(fm, g_h, g_w)


def ela_forward(fm: FeatureMap, params: ELAParams) -> FeatureMap:
    """Normalized gate path: each direction is gated straight from its own
    pooled strip, y_h = sigma(GN(F_h(z_h))) and symmetrically for width."""
    z_h, z_w = strip_pool(fm, params.corrected_mean)
    g_h = params.gn_h(params.fh(z_h)).sigmoid()
    g_w = params.gn_w(params.fw(z_w)).sigmoid()
    return coordinate_attention_apply(fm, g_h, g_w)
