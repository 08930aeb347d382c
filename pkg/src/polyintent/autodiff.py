"""Reverse-mode automatic differentiation over a fixed float64 op set.

Define-by-run: each operation records its grad-requiring inputs and a
backward closure; ``Tensor.backward()`` walks the recorded graph exactly
once in reverse topological order. The op vocabulary is deliberately small:
matmul, add/sub/mul/div, exp/log/sqrt/square, GELU, embedding lookup,
axis reductions, shape ops, and the softmax / layer-norm compositions a
small transformer encoder and its losses need. Everything is 64-bit; a NaN
or Inf anywhere is treated as a contract violation and raised immediately,
naming the op that produced it.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import NumericalInstabilityError, ShapeError, ValidationError

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A float64 ndarray plus reverse-mode bookkeeping.

    ``data`` is always a C-order float64 array; ``grad`` is filled by
    ``backward()`` for tensors created with ``requires_grad=True`` and for
    intermediate nodes that depend on them.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericalInstabilityError(f"non-finite values produced by op '{op}'")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar, visiting each graph node once."""
        if self.data.shape != ():
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen = {id(self)}
        stack: list[tuple[Tensor, iter]] = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for parent in parents:
                if id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    pushed = True
                    break
            if not pushed:
                topo.append(node)
                stack.pop()
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # -- elementwise / reduction methods ------------------------------------

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def swapaxes(self, axis1, axis2):
        return swapaxes(self, axis1, axis2)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    """A graph constant: never tracked, even if built from a Tensor."""
    return Tensor(value.data if isinstance(value, Tensor) else value)


def _node(data, parents, backward, op) -> Tensor:
    tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(
        data,
        requires_grad=True,
        op=op,
        _parents=tuple(p for p in parents if p.requires_grad),
        _backward=backward,
    )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- primitive ops ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.data.shape))

    return _node(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), backward, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs 2-D or stacked operands, got {a.data.ndim}-D @ {b.data.ndim}-D"
        )
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(out, (a, b), backward, "matmul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _node(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(out, (a,), backward, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out)

    return _node(out, (a,), backward, "sqrt")


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), backward, "square")


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); subgradient passes through only where a >= floor."""
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data >= floor))

    return _node(np.maximum(a.data, floor), (a,), backward, "clamp_min")


def gelu(a) -> Tensor:
    """Exact erf-form GELU with its analytic derivative."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (cdf + a.data * pdf))

    return _node(a.data * cdf, (a,), backward, "gelu")


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of a 2-D table by integer id; grads scatter-add back."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.data.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValidationError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValidationError(
            f"token id out of range [0, {table.data.shape[0]}): min={ids.min()}, max={ids.max()}"
        )

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table._accumulate(acc)

    return _node(table.data[ids], (table,), backward, "embedding_lookup")


def take(a, index) -> Tensor:
    """Basic (slice/int) indexing; grads scatter into a zero tensor."""
    a = as_tensor(a)
    out = np.array(a.data[index])

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] += g
            a._accumulate(full)

    return _node(out, (a,), backward, "take")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.reshape(g, a.data.shape))

    return _node(np.reshape(a.data, shape), (a,), backward, "reshape")


def swapaxes(a, axis1, axis2) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, axis1, axis2))

    return _node(np.swapaxes(a.data, axis1, axis2), (a,), backward, "swapaxes")


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims) / count)

    return _node(out, (a,), backward, "mean")


# -- compositions -----------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    """Numerically stable softmax; the shift is a constant, so the gradient
    is exact (softmax is shift-invariant)."""
    a = as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tensor_sum(e, axis=axis, keepdims=True))


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    centered = sub(a, shift)
    lse = log(tensor_sum(exp(centered), axis=axis, keepdims=True))
    return sub(centered, lse)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    a = as_tensor(a)
    mu = tensor_mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = tensor_mean(square(centered), axis=-1, keepdims=True)
    scale = sqrt(add(var, eps))
    return add(mul(div(centered, scale), gain), bias)


# -- finite-difference verification ------------------------------------------


def gradient_check(loss_fn, params, epsilon: float = 1e-5, n_coords: int = 16, seed: int = 0) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must rebuild a scalar loss from the given parameter Tensors
    on every call (define-by-run). Returns the max over sampled parameter
    coordinates of ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ShapeError("loss_fn must return a scalar Tensor")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grads in zip(params, analytic):
        n = p.data.size
        if n <= n_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=n_coords, replace=False))
        for flat_index in coords:
            index = np.unravel_index(flat_index, p.data.shape)
            original = p.data[index]
            try:
                p.data[index] = original + epsilon
                hi = float(loss_fn().data)
                p.data[index] = original - epsilon
                lo = float(loss_fn().data)
            finally:
                p.data[index] = original
            numeric = (hi - lo) / (2.0 * epsilon)
            exact = float(grads[index])
            err = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
            worst = max(worst, err)
    return worst
