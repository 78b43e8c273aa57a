"""Minimal reverse-mode autodiff over numpy arrays.

Supports exactly the primitives the training losses need: affine maps,
tanh, GeLU, elementwise add/mul, powers, sum/mean, row gather/concat,
pairwise Euclidean distance and row-wise log-sum-exp.  Anything else is
deliberately absent so the whole op set stays checkable against central
finite differences.

All data is float64.  Reductions use numpy's fixed serial summation
order, so a graph evaluates bit-identically for a given backend.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A node in the computation graph.

    ``source`` tags leaves created from trainable parameter arrays so
    gradients can be collected per-array after :func:`backward`.
    """

    __slots__ = ("data", "grad", "parents", "_bwd", "source")

    def __init__(self, data, parents=(), bwd=None, source=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._bwd = bwd
        self.source = source

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self._bwd is None})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def leaf(array: np.ndarray) -> Tensor:
    """Lift a parameter array into the graph, remembering its identity."""
    return Tensor(array, source=array)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    out._bwd = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    out._bwd = bwd
    return out


def linear(x, weight, bias) -> Tensor:
    """Affine map x @ W.T + b for W of shape [out, in], b of shape [out]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ValueError(
            f"affine shape mismatch: input {x.data.shape} vs weight "
            f"{weight.data.shape} (expects in-dim {weight.data.shape[1]})"
        )
    out = Tensor(x.data @ weight.data.T + bias.data, parents=(x, weight, bias))

    def bwd(g):
        x2 = x.data if x.data.ndim == 2 else x.data[None, :]
        g2 = g if g.ndim == 2 else g[None, :]
        gx = g @ weight.data
        gw = g2.T @ x2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    out._bwd = bwd
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, parents=(a,))
    out._bwd = lambda g: (g * (1.0 - t * t),)
    return out


def gelu(a) -> Tensor:
    """GeLU, tanh approximation: 0.5x(1 + tanh(c(x + 0.044715 x^3)))."""
    a = as_tensor(a)
    x = a.data
    with np.errstate(over="ignore"):  # x^3 may overflow; tanh saturates anyway
        inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t), parents=(a,))

    def bwd(g):
        with np.errstate(over="ignore", invalid="ignore"):
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    out._bwd = bwd
    return out


def power(a, p: float) -> Tensor:
    """Elementwise a**p for non-negative inputs when p is fractional."""
    a = as_tensor(a)
    p = float(p)
    out = Tensor(a.data**p, parents=(a,))

    def bwd(g):
        base = np.where(a.data == 0.0, 1.0, a.data) if p < 1.0 else a.data
        d = p * base ** (p - 1.0)
        if p < 1.0:
            d = np.where(a.data == 0.0, 0.0, d)
        return (g * d,)

    out._bwd = bwd
    return out


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis), parents=(a,))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    out._bwd = bwd
    return out


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def logsumexp(a) -> Tensor:
    """Row-wise log(sum(exp(a))) with max-shift stabilisation."""
    a = as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = Tensor((m + np.log(s)).ravel(), parents=(a,))
    softmax = e / s
    out._bwd = lambda g: (g[:, None] * softmax,)
    return out


def pairwise_dist(a, b) -> Tensor:
    """Matrix of Euclidean distances between rows of a and rows of b.

    Uses the active kernel backend.  The subgradient at coincident points
    is zero, which is exact whenever both rows come from the same tensor.
    """
    a, b = as_tensor(a), as_tensor(b)
    dist = _kernels.pairwise_dist(a.data, b.data)
    out = Tensor(dist, parents=(a, b))

    def bwd(g):
        ga, gb = _kernels.pairwise_dist_grad(a.data, b.data, dist, g)
        return ga, gb

    out._bwd = bwd
    return out


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], parents=(a,))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    out._bwd = bwd
    return out


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), parents=tuple(parts))
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        grads = []
        start = 0
        for n in sizes:
            grads.append(g[start : start + n])
            start += n
        return tuple(grads)

    out._bwd = bwd
    return out


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root, accumulating ``.grad``."""
    if root.data.size != 1:
        raise ValueError(
            f"backward requires a scalar root, got shape {root.data.shape}"
        )
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._bwd is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._bwd(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g


def grads_by_source(root: Tensor) -> dict[int, np.ndarray]:
    """Map id(parameter array) -> accumulated gradient, after backward()."""
    out: dict[int, np.ndarray] = {}
    visited: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node.source is not None and node.grad is not None:
            key = id(node.source)
            if key in out:
                out[key] = out[key] + node.grad
            else:
                out[key] = node.grad
        stack.extend(node.parents)
    return out
