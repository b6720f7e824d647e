"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors are numpy arrays (typically shaped batch x channel x length) wrapped
with graph linkage; every operation records a closure that turns the output
gradient into parent gradients, and ``backward`` walks the graph in reverse
topological order accumulating exact vector-Jacobian products.

Conventions at non-differentiable points: ``abs`` uses subgradient 0 at 0,
``clamp_min`` uses subgradient 0 at the kink, ``leaky_relu`` takes the
positive branch at 0, and ``maxpool2`` routes the gradient to the first of
tied maxima.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class DiffTensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph walk ---------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self.grad = np.asarray(grad) if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(astensor(other), -1.0))

    def __rsub__(self, other):
        return add(astensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(astensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], tuple) else shape[0])

    def abs(self):
        return absolute(self)

    def clamp_min(self, lo=0.0):
        return clamp_min(self, lo)


def _scalar_err(t):
    raise ShapeError(f"item() needs a single-element tensor, got {t.shape}")


def _topo_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def astensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward) -> DiffTensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return DiffTensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return DiffTensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------

def add(a, b) -> DiffTensor:
    a, b = astensor(a), astensor(b)
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> DiffTensor:
    a, b = astensor(a), astensor(b)
    data = a.data * b.data
    return _make(
        data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> DiffTensor:
    a, b = astensor(a), astensor(b)
    data = a.data / b.data
    return _make(
        data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def power(a, exponent: float) -> DiffTensor:
    a = astensor(a)
    e = float(exponent)
    data = a.data ** e
    return _make(data, (a,), lambda g: (g * e * a.data ** (e - 1.0),))


def absolute(a) -> DiffTensor:
    a = astensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a, lo=0.0) -> DiffTensor:
    a = astensor(a)
    keep = a.data > lo
    return _make(np.maximum(a.data, lo), (a,), lambda g: (g * keep,))


def sigmoid(a) -> DiffTensor:
    a = astensor(a)
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(a, negative_slope=0.01) -> DiffTensor:
    a = astensor(a)
    pos = a.data >= 0
    s = float(negative_slope)
    data = np.where(pos, a.data, s * a.data)
    return _make(data, (a,), lambda g: (g * np.where(pos, 1.0, s),))


# -- reductions / shape -----------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> DiffTensor:
    a = astensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy() if not keepdims else g * np.ones(a.shape),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, tuple(x % a.ndim for x in ax))
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> DiffTensor:
    a = astensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[x % a.ndim] for x in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> DiffTensor:
    a = astensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=1) -> DiffTensor:
    ts = [astensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(ts), backward)


def pad1d(a, left: int, right: int) -> DiffTensor:
    """Zero-pad the last axis."""
    a = astensor(a)
    if left < 0 or right < 0:
        raise ShapeError(f"negative padding ({left}, {right})")
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    data = np.pad(a.data, width)
    n = a.shape[-1]
    return _make(data, (a,), lambda g: (g[..., left:left + n],))


# -- structured ops ---------------------------------------------------------

def conv1d(x, kernel, padding: int | None = None) -> DiffTensor:
    """Cross-correlate ``x`` (B, C_in, L) with ``kernel`` (C_out, C_in, K).

    ``padding`` is the zero padding added to both ends of the length axis;
    the default ``(K - 1) // 2`` preserves length for odd K.
    """
    x, kernel = astensor(x), astensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d needs 3-D input and kernel, got {x.shape} and {kernel.shape}")
    b, c_in, n = x.shape
    c_out, kc_in, k = kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel expects {kc_in} input channels, signal has {c_in}")
    p = (k - 1) // 2 if padding is None else int(padding)
    if n + 2 * p < k:
        raise ShapeError(f"length {n} with padding {p} is shorter than kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p))) if p else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-1)
    data = np.einsum("bcjk,ock->boj", windows, kernel.data, optimize=True)

    def backward(g):
        grad_x = None
        grad_k = None
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, k, axis=-1)
            flipped = kernel.data[:, :, ::-1]
            full = np.einsum("boik,ock->bci", gwin, flipped, optimize=True)
            grad_x = full[:, :, p:p + n] if p else full[:, :, :n]
        if kernel.requires_grad:
            grad_k = np.einsum("boj,bcjk->ock", g, windows, optimize=True)
        return grad_x, grad_k

    return _make(data, (x, kernel), backward)


def maxpool2(x) -> DiffTensor:
    """Max-pool the length axis with kernel and stride 2."""
    x = astensor(x)
    b, c, n = x.shape
    if n % 2:
        raise ShapeError(f"maxpool2 needs an even length, got {n}; pad by 1")
    pairs = x.data.reshape(b, c, n // 2, 2)
    winners = pairs.argmax(axis=-1)
    data = np.take_along_axis(pairs, winners[..., None], axis=-1)[..., 0]

    def backward(g):
        gp = np.zeros((b, c, n // 2, 2), dtype=g.dtype)
        np.put_along_axis(gp, winners[..., None], g[..., None], axis=-1)
        return (gp.reshape(b, c, n),)

    return _make(data, (x,), backward)


def upsample2(x) -> DiffTensor:
    """Nearest-neighbor upsample of the length axis by 2."""
    x = astensor(x)
    data = np.repeat(x.data, 2, axis=-1)

    def backward(g):
        b, c, n2 = g.shape
        return (g.reshape(b, c, n2 // 2, 2).sum(axis=-1),)

    return _make(data, (x,), backward)


def parameter(data, name=None) -> DiffTensor:
    return DiffTensor(np.asarray(data), requires_grad=True, name=name)
