"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` is a node in a dynamically built graph.  Every primitive
records its parents and a closure that pushes the upstream gradient back to
them; :func:`backward` walks the graph in reverse topological order.

Broadcasting follows numpy.  Gradients flowing into a broadcast operand are
summed back down to that operand's shape.
"""

from __future__ import annotations

import numpy as np

from . import special
from .exceptions import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sum",
    "mean",
    "max",
    "softmax",
    "log_softmax",
    "logsumexp",
    "lgamma",
    "digamma",
    "leaky_relu",
    "softplus",
    "dropout_mask_apply",
    "take_along",
]


class Tensor:
    """A value in the computation graph, optionally tracking its gradient."""

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward_fn):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), "div", bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), "neg", bw)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), "exp", bw)


def log(a):
    a = as_tensor(a)
    if np.any(~(a.data > 0)):
        raise DomainError("log: operand must be strictly positive")

    def bw(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), "log", bw)


def lgamma(a):
    a = as_tensor(a)
    out_data = special.lgamma(a.data)

    def bw(g):
        a._accumulate(g * special.digamma(a.data))

    return _make(out_data, (a,), "lgamma", bw)


def digamma(a):
    a = as_tensor(a)
    out_data = special.digamma(a.data)

    def bw(g):
        a._accumulate(g * special.trigamma(a.data))

    return _make(out_data, (a,), "digamma", bw)


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)

    def bw(g):
        a._accumulate(g * factor)

    return _make(a.data * factor, (a,), "leaky_relu", bw)


def softplus(a):
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def bw(g):
        a._accumulate(g * (0.5 * (1.0 + np.tanh(0.5 * a.data))))

    return _make(out_data, (a,), "softplus", bw)


def dropout_mask_apply(a, mask, keep):
    """Multiply by a {0,1} mask and rescale kept units by ``1/keep``."""
    a = as_tensor(a)
    if not 0 < keep <= 1:
        raise ContractError(f"keep probability must lie in (0, 1], got {keep}")
    scale = np.asarray(mask, dtype=np.float64) / keep
    try:
        out_data = a.data * scale
    except ValueError:
        raise ShapeError("dropout", a.shape, np.shape(mask)) from None

    def bw(g):
        a._accumulate(_unbroadcast(g * scale, a.shape))

    return _make(out_data, (a,), "dropout", bw)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 1:
                ga = np.multiply.outer(g, bd)
            else:
                ga = g @ np.swapaxes(bd, -1, -2) if ad.ndim > 1 else g @ bd.T
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            elif bd.ndim == 1:
                gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(ad.ndim - 1))))
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
            b._accumulate(gb)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


# ---------------------------------------------------------------- reductions


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        a._accumulate(_expand(g, a.shape, axis, keepdims))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max(a, axis=-1, keepdims=False):
    """Maximum along ``axis``; ties send the gradient to the first argmax."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_k, gk, axis=axis)
        a._accumulate(full)

    return _make(out, (a,), "max", bw)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    weights = shifted / s

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(gk * weights)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), "logsumexp", bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def bw(g):
        a._accumulate(g - probs * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), "log_softmax", bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), "softmax", bw)


# ---------------------------------------------------------------- indexing


def _getitem(a, index):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _make(a.data[index], (a,), "getitem", bw)


def take_along(a, indices, axis=-1):
    """``a[i, indices[i]]`` for a 2-D tensor and integer vector ``indices``."""
    a = as_tensor(a)
    idx = np.expand_dims(np.asarray(indices, dtype=np.intp), axis)
    out = np.squeeze(np.take_along_axis(a.data, idx, axis=axis), axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return _make(out, (a,), "take", bw)


def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", bw)


# ---------------------------------------------------------------- backprop


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Back-propagate from a scalar ``root``.

    Gradients accumulate into ``.grad`` of every node that requires them.
    Returns a dict mapping each leaf (a node without parents) to its gradient.
    """
    if not isinstance(root, Tensor) or root.data.size != 1:
        shape = root.shape if isinstance(root, Tensor) else np.shape(root)
        raise ContractError(f"backward needs a scalar root, got shape {shape}")
    if not root.requires_grad:
        return {}
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    leaves = {}
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if not node._parents:
            leaves[node] = node.grad
    return leaves


def grad(fn, *inputs):
    """Gradient of scalar ``fn(*inputs)`` with respect to each input array."""
    leaves = [Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    backward(out)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    return grads[0] if len(grads) == 1 else grads
