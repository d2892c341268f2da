"""Tape-based reverse-mode differentiation over numpy arrays.

Every op accepts plain arrays or :class:`Node` values. When no operand
requires a gradient (or inside :func:`no_grad`) the op returns a plain array
and records nothing, so the same layer code serves both the numeric and the
differentiable path.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from . import kernels
from .tensor import DimensionError, NonFiniteError, ParameterError

_grad_enabled = True


class Node:
    __slots__ = ("value", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, op="const"):
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Param(Node):
    """Trainable leaf. ``value`` is a private writable buffer."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64, copy=True))
        self.name = name
        self.requires_grad = True

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def frozen(params: Iterable[Param]):
    """Treat ``params`` as constants for the duration of the block."""
    params = list(params)
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def value(x):
    return x.value if isinstance(x, Node) else x


def _make(out, inputs, backward_fn, op):
    """Wrap ``out`` in a node only if some input needs a gradient."""
    if not _grad_enabled:
        return out
    if not any(isinstance(x, Node) and x.requires_grad for x in inputs):
        return out
    parents = [x if isinstance(x, Node) else Node(x) for x in inputs]
    return Node(out, parents, backward_fn, op)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


# --- elementwise -----------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    _same_shape(av, bv, "add")
    return _make(av + bv, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    av, bv = value(a), value(b)
    _same_shape(av, bv, "sub")
    return _make(av - bv, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    """Hadamard product."""
    av, bv = value(a), value(b)
    _same_shape(av, bv, "mul")
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, c: float):
    av = value(a)
    return _make(av * c, (a,), lambda g: (g * c,), "scale")


def square(a):
    av = value(a)
    return _make(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def leaky_relu(a, slope: float = 0.2):
    av = value(a)
    d = np.where(av > 0, 1.0, slope)
    return _make(av * d, (a,), lambda g: (g * d,), "leaky_relu")


def tanh(a):
    out = np.tanh(value(a))
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    av = value(a)
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# --- reductions and shape ---------------------------------------------------

def sum(a):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    return _make(np.asarray(av.sum()), (a,), lambda g: (np.full(av.shape, float(g)),), "sum")


def mean(a):
    av = value(a)
    n = av.size
    return _make(np.asarray(av.mean()), (a,), lambda g: (np.full(av.shape, float(g) / n),), "mean")


def reshape(a, shape):
    av = value(a)
    return _make(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),), "reshape")


def transpose(a):
    av = value(a)
    if av.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {av.shape}")
    return _make(av.T, (a,), lambda g: (g.T,), "transpose")


def concat(xs, axis: int = -1):
    vals = [value(x) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(vals, axis=axis), xs, back, "concat")


def tile_spatial(c, h: int, w: int):
    """``[B, C] -> [B, h, w, C]`` by copying each row to every location."""
    cv = value(c)
    if cv.ndim != 2:
        raise DimensionError(f"tile_spatial expects [B, C], got {cv.shape}")
    out = np.repeat(np.repeat(cv[:, None, None, :], h, axis=1), w, axis=2)
    return _make(out, (c,), lambda g: (g.sum(axis=(1, 2)),), "tile_spatial")


def add_bias(x, b):
    """Add a per-channel bias vector along the last axis."""
    xv, bv = value(x), value(b)
    if bv.ndim != 1 or xv.shape[-1] != bv.shape[0]:
        raise DimensionError(f"add_bias: bias {bv.shape} does not match channels of {xv.shape}")
    axes = tuple(range(xv.ndim - 1))
    return _make(xv + bv, (x, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


# --- linear algebra -----------------------------------------------------------

def matmul(a, b):
    """``[..., k] @ [k, n] -> [..., n]``; the leading axes of ``a`` are batch axes."""
    av, bv = value(a), value(b)
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    k, n = bv.shape
    a2 = av.reshape(-1, k)
    # fixed left-to-right sums: results do not depend on BLAS blocking
    out = kernels.matmul_ordered(a2, bv).reshape(av.shape[:-1] + (n,))

    def back(g):
        g2 = g.reshape(-1, n)
        return (kernels.matmul_ordered(g2, bv.T).reshape(av.shape),
                kernels.matmul_ordered(a2.T, g2))

    return _make(out, (a, b), back, "matmul")


def bilinear(x, w, y):
    """``out[..., i] = x[..., :] @ w[i] @ y[..., :]`` for ``w`` of shape ``[O, D, D']``."""
    xv, wv, yv = value(x), value(w), value(y)
    if wv.ndim != 3 or xv.shape[-1] != wv.shape[1] or yv.shape[-1] != wv.shape[2] \
            or xv.shape[:-1] != yv.shape[:-1]:
        raise DimensionError(f"bilinear: shapes {xv.shape}, {wv.shape}, {yv.shape} are incompatible")
    out = np.einsum("...a,iab,...b->...i", xv, wv, yv)

    def back(g):
        gx = np.einsum("...i,iab,...b->...a", g, wv, yv)
        n_out = wv.shape[0]
        gw = np.einsum("ni,na,nb->iab", g.reshape(-1, n_out), xv.reshape(-1, wv.shape[1]),
                       yv.reshape(-1, wv.shape[2]))
        gy = np.einsum("...i,iab,...a->...b", g, wv, xv)
        return gx, gw, gy

    return _make(out, (x, w, y), back, "bilinear")


def embedding(table, ids):
    tv = value(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = tv[ids]

    def back(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), back, "embedding")


# --- convolution ------------------------------------------------------------

def conv2d(x, w, stride: int = 1, pad: int = 0):
    """NHWC convolution; ``w`` has shape ``[kh, kw, C_in, C_out]``."""
    xv, wv = value(x), value(w)
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[3] != wv.shape[2]:
        raise DimensionError(f"conv2d: input {xv.shape} incompatible with kernel {wv.shape}")
    kh, kw, cin, cout = wv.shape
    bsz, h, wd, _ = xv.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(xv, kh, kw, stride, pad)
    wmat = wv.reshape(-1, cout)
    out = (cols @ wmat).reshape(bsz, ho, wo, cout)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(wv.shape)
        gx = kernels.col2im(g2 @ wmat.T, xv.shape, kh, kw, stride, pad)
        return gx, gw

    return _make(out, (x, w), back, "conv2d")


def upsample2x(x):
    """Nearest-neighbour upsampling by two in both spatial axes."""
    xv = value(x)
    out = xv.repeat(2, axis=1).repeat(2, axis=2)

    def back(g):
        b, h, w, c = xv.shape
        return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _make(out, (x,), back, "upsample2x")


# --- losses -------------------------------------------------------------------

def log_softmax(z):
    zv = value(z)
    shifted = zv - zv.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(out, (z,), back, "log_softmax")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax ``logits``."""
    lp = log_softmax(logits)
    lv = value(lp)
    labels = np.asarray(labels, dtype=np.int64)
    n = lv.shape[0]
    out = np.asarray(-lv[np.arange(n), labels].mean())

    def back(g):
        gl = np.zeros_like(lv)
        gl[np.arange(n), labels] = -float(g) / n
        return (gl,)

    return _make(out, (lp,), back, "cross_entropy")


# --- driver -----------------------------------------------------------------

def _toposort(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``root`` with respect to every reachable :class:`Param`.

    Returns ``{param name: gradient}``. Contributions to a node are summed in
    the order its consumers registered them, so results are reproducible.
    """
    if not isinstance(root, Node):
        root = Node(np.asarray(root, dtype=np.float64))
    if root.value.size != 1 or root.value.ndim > 1:
        raise ParameterError(f"backward needs a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    result: dict[str, np.ndarray] = {}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            if node.name in result:
                raise ParameterError(f"duplicate parameter name {node.name!r}")
            result[node.name] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return result


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``coords`` restricts the probe to a subset of flat indices; the remaining
    entries of the result are zero.
    """
    if not h > 0:
        raise ParameterError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is non-finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(analytic, numeric, floor: float = 1e-7) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
