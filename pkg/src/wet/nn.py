"""Activations, losses, optimizers, dropout, and the small layer zoo.

The pieces here are deliberately plain: parameters are bare Tensors, every
layer exposes ``parameters()`` as an ordered name->Tensor dict, and train/eval
behaviour is an explicit argument rather than hidden state.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat

ACTIVATION_KINDS = ("linear", "prelu", "leaky_relu", "tanh", "elu")

LOSS_KINDS = (
    "binary_crossentropy",
    "categorical_crossentropy",
    "mean_squared_error",
    "mean_absolute_error",
    "mean_squared_logarithmic_error",
)

OPTIMIZER_KINDS = ("adam", "nadam", "sgd", "rmsprop")

CROSSENTROPY_EPS = 1e-7  # probability clamp; avoids log(0)


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in params.items()}


# ---- activations --------------------------------------------------------------


def apply_activation(kind: str, x: Tensor, alpha=None, slope: float = 0.01) -> Tensor:
    """Elementwise nonlinearity. `alpha` feeds prelu (learnable) and elu (fixed)."""
    if kind == "linear":
        return x
    if kind == "leaky_relu":
        return x.leaky_relu(slope)
    if kind == "tanh":
        return x.tanh()
    if kind == "elu":
        return x.elu(1.0 if alpha is None else float(alpha))
    if kind == "prelu":
        if alpha is None:
            alpha = Tensor(0.25)
        elif not isinstance(alpha, Tensor):
            alpha = Tensor(alpha)
        # x>0 branch plus alpha-scaled negative part; grads reach alpha too
        return x.relu() - alpha * (-x).relu()
    raise ValueError(f"unknown activation kind {kind!r}")


class Activation:
    """Activation with state: prelu carries its learnable negative-slope."""

    def __init__(self, kind: str):
        if kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {kind!r}")
        self.kind = kind
        self.alpha = Tensor(0.25, requires_grad=True) if kind == "prelu" else None

    def __call__(self, x: Tensor) -> Tensor:
        return apply_activation(self.kind, x, alpha=self.alpha)

    def parameters(self) -> dict:
        return {"alpha": self.alpha} if self.alpha is not None else {}


# ---- losses --------------------------------------------------------------------


def _abs(x: Tensor) -> Tensor:
    return x.relu() + (-x).relu()


def compute_loss(kind: str, pred: Tensor, target: Tensor) -> Tensor:
    """Scalar loss, differentiable w.r.t. `pred`."""
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if kind != "categorical_crossentropy" and pred.shape != target.shape:
        raise ValueError(f"pred/target shapes differ: {pred.shape} vs {target.shape}")

    if kind == "binary_crossentropy":
        t = target.data
        if not np.all((t == 0.0) | (t == 1.0)):
            raise ValueError("binary_crossentropy targets must be 0 or 1")
        p = pred.clip(CROSSENTROPY_EPS, 1.0 - CROSSENTROPY_EPS)
        return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()

    if kind == "categorical_crossentropy":
        # single-probability inputs are treated as the two-class distribution
        # [1-p, p]; general inputs are per-row distributions
        if pred.ndim <= 1 or pred.shape[-1] == 1:
            p1 = pred.reshape(-1, 1)
            pred = concat([1.0 - p1, p1], axis=1)
            t1 = target.reshape(-1, 1)
            target = Tensor(np.concatenate([1.0 - t1.data, t1.data], axis=1))
        p = pred.clip(CROSSENTROPY_EPS, 1.0 - CROSSENTROPY_EPS)
        return -(target * p.log()).sum(axis=1).mean()

    if kind == "mean_squared_error":
        return ((pred - target) ** 2).mean()

    if kind == "mean_absolute_error":
        return _abs(pred - target).mean()

    # mean_squared_logarithmic_error; inputs are clamped below at -1 + eps
    lp = (pred + 1.0).clip(CROSSENTROPY_EPS, np.inf).log()
    lt = (target + 1.0).clip(CROSSENTROPY_EPS, np.inf).log()
    return ((lp - lt) ** 2).mean()


# ---- optimizers -----------------------------------------------------------------


class Optimizer:
    """Adam / Nadam / SGD / RMSprop over a fixed parameter list."""

    def __init__(
        self,
        kind: str,
        params,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        rho: float = 0.9,
    ):
        if kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps, self.rho = beta1, beta2, eps, rho
        self.step_count = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} has no gradient; run backward first")
        self.step_count += 1
        t = self.step_count
        lr = self.learning_rate
        for i, p in enumerate(self.params):
            g = p.grad
            if self.kind == "sgd":
                p.data -= lr * g
            elif self.kind == "rmsprop":
                self._v[i] = self.rho * self._v[i] + (1.0 - self.rho) * g * g
                p.data -= lr * g / (np.sqrt(self._v[i]) + self.eps)
            elif self.kind == "adam":
                self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
                self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
                m_hat = self._m[i] / (1.0 - self.beta1**t)
                v_hat = self._v[i] / (1.0 - self.beta2**t)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            else:  # nadam: Adam with a Nesterov look-ahead on the first moment
                self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
                self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
                m_hat = self._m[i] / (1.0 - self.beta1 ** (t + 1))
                v_hat = self._v[i] / (1.0 - self.beta2**t)
                m_bar = self.beta1 * m_hat + (1.0 - self.beta1) * g / (1.0 - self.beta1**t)
                p.data -= lr * m_bar / (np.sqrt(v_hat) + self.eps)


def optimizer_step(state: Optimizer, params=None):
    """Apply one update. `params`, when given, must be the optimizer's own list."""
    if params is not None and [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("params do not match the optimizer's parameter list")
    state.step()


# ---- dropout --------------------------------------------------------------------


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) during training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


# ---- parameter initialization -----------------------------------------------------


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


# ---- layers ------------------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """Fused x @ W + b for 2-D x (single graph node)."""
    data = x.data @ w.data
    if b is None:
        def bwd(g):
            return g @ w.data.T, x.data.T @ g
        return Tensor.from_op(data, (x, w), bwd)

    def bwd(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor.from_op(data + b.data, (x, w, b), bwd)


class Dense:
    """Affine map on the last axis: y = x @ W + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = Tensor(glorot_uniform(rng, d_in, d_out), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return affine(x, self.W, self.b)
        out = x @ self.W
        return out if self.b is None else out + self.b

    def parameters(self) -> dict:
        out = {"W": self.W}
        if self.b is not None:
            out["b"] = self.b
        return out


class ChannelTransform:
    """1x1 transform across channels of a [C, S] map: y = W x + b."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.W = Tensor(glorot_uniform(rng, c_out, c_in), requires_grad=True)
        self.b = Tensor(np.zeros((c_out, 1)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        w, b = self.W, self.b

        def bwd(g):
            return g @ x.data.T, w.data.T @ g, g.sum(axis=1, keepdims=True)

        return Tensor.from_op(w.data @ x.data + b.data, (w, x, b), bwd)

    def parameters(self) -> dict:
        return {"W": self.W, "b": self.b}


class LayerNorm:
    """Per-position normalization over the feature (last) axis."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.data.mean(axis=-1, keepdims=True)
        centered = x.data - mu
        sigma = np.sqrt((centered**2).mean(axis=-1, keepdims=True) + self.eps)
        xhat = centered / sigma
        gamma, beta = self.gamma, self.beta

        def bwd(g):
            scaled = g * gamma.data
            dx = (
                scaled
                - scaled.mean(axis=-1, keepdims=True)
                - xhat * (scaled * xhat).mean(axis=-1, keepdims=True)
            ) / sigma
            axes = tuple(range(g.ndim - 1))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor.from_op(xhat * gamma.data + beta.data, (x, gamma, beta), bwd)

    def parameters(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}


class BatchNorm1d:
    """Per-channel normalization of a [C, S] map over its spatial axis.

    Training mode normalizes with batch statistics and updates the running
    buffers; eval mode uses the running buffers only.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones((channels, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((channels, 1)), requires_grad=True)
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros((channels, 1))
        self.running_var = np.ones((channels, 1))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = x.mean(axis=1, keepdims=True)
            centered = x - mu
            var = (centered**2).mean(axis=1, keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data
            self.running_var = (1 - m) * self.running_var + m * var.data
            xhat = centered / (var + self.eps).sqrt()
        else:
            xhat = (x - Tensor(self.running_mean)) / Tensor(
                np.sqrt(self.running_var + self.eps)
            )
        return xhat * self.gamma + self.beta

    def parameters(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    def state_buffers(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class GroupNorm:
    """Normalize a [C, S] map within channel groups (no running state)."""

    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        if channels % groups != 0:
            raise ValueError(f"groups {groups} must divide channels {channels}")
        self.channels = channels
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones((channels, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((channels, 1)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        c, s = x.shape
        grouped = x.data.reshape(self.groups, (c // self.groups) * s)
        mu = grouped.mean(axis=1, keepdims=True)
        centered = grouped - mu
        sigma = np.sqrt((centered**2).mean(axis=1, keepdims=True) + self.eps)
        xhat = (centered / sigma).reshape(c, s)
        gamma, beta = self.gamma, self.beta

        def bwd(g):
            scaled = (g * gamma.data).reshape(self.groups, -1)
            xh = xhat.reshape(self.groups, -1)
            dx = (
                scaled
                - scaled.mean(axis=1, keepdims=True)
                - xh * (scaled * xh).mean(axis=1, keepdims=True)
            ) / sigma
            return (
                dx.reshape(c, s),
                (g * xhat).sum(axis=1, keepdims=True),
                g.sum(axis=1, keepdims=True),
            )

        return Tensor.from_op(xhat * gamma.data + beta.data, (x, gamma, beta), bwd)

    def parameters(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}


class LSTM:
    """Single-layer LSTM unrolled over a [L, d_in] sequence -> [L, d_hidden]."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_hidden = d_hidden
        self.Wx = Tensor(glorot_uniform(rng, d_in, 4 * d_hidden), requires_grad=True)
        self.Wh = Tensor(glorot_uniform(rng, d_hidden, 4 * d_hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * d_hidden), requires_grad=True)

    def _preact(self, x: Tensor, t: int, h: Tensor) -> Tensor:
        """Fused x[t] @ Wx + h @ Wh + b (one node)."""
        wx, wh, b = self.Wx, self.Wh, self.b
        row = x.data[t : t + 1]

        def bwd(g):
            dx = np.zeros_like(x.data)
            dx[t] = g @ wx.data.T
            return dx, row.T @ g, g @ wh.data.T, h.data.T @ g, g[0]

        return Tensor.from_op(
            row @ wx.data + h.data @ wh.data + b.data, (x, wx, h, wh, b), bwd
        )

    def __call__(self, x: Tensor) -> Tensor:
        # gate layout is [input, forget, output | candidate] so the three
        # sigmoids run as one node
        h_dim = self.d_hidden
        steps = x.shape[0]
        h = Tensor(np.zeros((1, h_dim)))
        c = Tensor(np.zeros((1, h_dim)))
        outputs = []
        for t in range(steps):
            z = self._preact(x, t, h)
            gates = z[:, : 3 * h_dim].sigmoid()
            i = gates[:, 0:h_dim]
            f = gates[:, h_dim : 2 * h_dim]
            o = gates[:, 2 * h_dim : 3 * h_dim]
            g = z[:, 3 * h_dim :].tanh()
            c = f * c + i * g
            h = o * c.tanh()
            outputs.append(h)
        return concat(outputs, axis=0)

    def parameters(self) -> dict:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}
