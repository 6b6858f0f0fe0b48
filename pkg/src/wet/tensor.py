"""Dense tensors with reverse-mode gradient tracking.

Everything downstream (attention kernels, gating modules, the branches and
the training loop) runs on this class. Storage is a row-major numpy array;
the computation graph is built eagerly and walked once, in reverse
topological order, by ``backward``. Gradients accumulate until explicitly
zeroed, so a parameter shared between graph regions (or between ensemble
branches) collects contributions from every use.
"""

from __future__ import annotations

import numpy as np

# 64-bit by default so tests and checkpoints are bit-reproducible; switch to
# float32 via set_default_dtype for speed experiments.
_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array node in a reverse-mode computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def zeros(*shape, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def ones(*shape, requires_grad=False):
        return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def from_op(data, parents, backward_fn):
        """Internal node: `backward_fn(grad)` returns one gradient per parent."""
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    # ---- basic introspection --------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self, context: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {context}")
        return self

    # ---- gradient machinery ---------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self):
        """Accumulate d(self)/d(leaf) into every tracked leaf. Scalar only."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar (size-1) tensor")
        if not self.requires_grad:
            raise ValueError("backward() on an untracked tensor")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None and not parent._parents:
                    parent._accumulate(pg)
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg

    # ---- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        return Tensor.from_op(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        return Tensor.from_op(
            self.data / other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data**2), other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out = self.data**exponent
        return Tensor.from_op(
            out, (self,), lambda g: (g * exponent * self.data ** (exponent - 1),)
        )

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {self.shape} x {other.shape}")
        return Tensor.from_op(
            self.data @ other.data,
            (self, other),
            lambda g: (g @ other.data.T, self.data.T @ g),
        )

    # ---- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self, axes=None):
        inv = None if axes is None else tuple(np.argsort(axes))
        return Tensor.from_op(
            np.transpose(self.data, axes),
            (self,),
            lambda g: (np.transpose(g, inv),),
        )

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        src_shape = self.shape

        def bwd(g):
            full = np.zeros(src_shape, dtype=g.dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor.from_op(self.data[idx], (self,), bwd)

    def take_flat(self, indices: np.ndarray) -> "Tensor":
        """Gather from the flattened tensor; duplicates scatter-add on backward."""
        indices = np.asarray(indices)
        src_shape = self.shape

        def bwd(g):
            flat = np.zeros(int(np.prod(src_shape)), dtype=g.dtype)
            np.add.at(flat, indices.reshape(-1), g.reshape(-1))
            return (flat.reshape(src_shape),)

        return Tensor.from_op(self.data.reshape(-1)[indices], (self,), bwd)

    # ---- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, self.shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[a] for a in axis]))
        else:
            count = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    # ---- pointwise nonlinearities ------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,))

    def log(self):
        return Tensor.from_op(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g / (2.0 * out),))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        out = np.where(
            self.data >= 0,
            1.0 / (1.0 + np.exp(-np.abs(self.data))),
            np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))),
        )
        return Tensor.from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self):
        mask = self.data > 0
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.01):
        factor = np.where(self.data > 0, 1.0, slope)
        return Tensor.from_op(self.data * factor, (self,), lambda g: (g * factor,))

    def elu(self, alpha: float = 1.0):
        neg = alpha * (np.exp(np.minimum(self.data, 0.0)) - 1.0)
        out = np.where(self.data > 0, self.data, neg)
        deriv = np.where(self.data > 0, 1.0, neg + alpha)
        return Tensor.from_op(out, (self,), lambda g: (g * deriv,))

    def clip(self, lo: float, hi: float):
        mask = (self.data > lo) & (self.data < hi)
        return Tensor.from_op(np.clip(self.data, lo, hi), (self,), lambda g: (g * mask,))


def _scalar_err(t):
    raise ShapeError(f"expected scalar tensor, got shape {t.shape}")


# ---- free functions ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along `axis`; backward splits the gradient back."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd
    )


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    return concat([t.reshape(1, -1) for t in tensors], axis=0)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by per-row max subtraction.

    Rows sum to 1 and the output is invariant to adding a constant to a row.
    """
    if x.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows input contains non-finite values")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return ((g - dot) * out,)

    return Tensor.from_op(out, (x,), bwd)


# ---- gradient checking -------------------------------------------------------


class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    def __init__(self, passed, max_rel_error, tol, n_checked, worst_coord):
        self.passed = passed
        self.max_rel_error = max_rel_error
        self.tol = tol
        self.n_checked = n_checked
        self.worst_coord = worst_coord

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
            f"tol={self.tol:.1e}, n_checked={self.n_checked})"
        )


def finite_difference_check(
    f, x: Tensor, tol: float = 1e-4, h: float = 1e-5, max_coords=None, rng=None
) -> GradCheckReport:
    """Check d f(x) / dx against central differences.

    `f` must map `x` to a scalar Tensor. All coordinates are probed unless
    `max_coords` limits the count (sampled by `rng`, which keeps the check
    affordable on large parameter tensors).
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise ShapeError("finite_difference_check requires a scalar-valued f")
    out.backward()
    analytic = np.zeros(x.shape) if x.grad is None else np.array(x.grad)

    coords = np.arange(x.size)
    if max_coords is not None and max_coords < x.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(x.size, size=max_coords, replace=False)

    flat = x.data.reshape(-1)
    max_err = 0.0
    worst = None
    for c in coords:
        keep = flat[c]
        flat[c] = keep + h
        up = f(x.detach()).item()
        flat[c] = keep - h
        down = f(x.detach()).item()
        flat[c] = keep
        numeric = (up - down) / (2.0 * h)
        a = analytic.reshape(-1)[c]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if err > max_err:
            max_err, worst = err, int(c)
    return GradCheckReport(max_err <= tol, max_err, tol, len(coords), worst)
