"""Reverse-mode autodiff on numpy float64 arrays.

A Node records its forward value, its parents, and a closure turning the
incoming adjoint into per-parent adjoint contributions.  `gradients` walks
the graph once in reverse topological order, so every recorded node is
visited exactly once and leaves the loss never touched get exact zeros.

Only the primitives the similarity heads need are provided; anything else
is a usage error by construction.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, UsageError

Array = np.ndarray


class Node:
    __slots__ = ("value", "parents", "backward")

    def __init__(self, value, parents: tuple = (), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward = backward

    @property
    def shape(self):
        return self.value.shape

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


def leaf(x) -> Node:
    """Detached leaf node (copies its input)."""
    return Node(np.array(x, dtype=np.float64, copy=True))


def _wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    if isinstance(x, (np.ndarray, float, int, np.floating, np.integer, list, tuple)):
        return Node(np.asarray(x, dtype=np.float64))
    raise UsageError(f"unsupported operand for autodiff: {type(x).__name__}")


def _unbroadcast(g: Array, shape: tuple) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    ash, bsh = a.value.shape, b.value.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return Node(a.value + b.value, (a, b), bwd)


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    ash, bsh = a.value.shape, b.value.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return Node(a.value - b.value, (a, b), bwd)


def neg(a) -> Node:
    a = _wrap(a)

    def bwd(g):
        return (-g,)

    return Node(-a.value, (a,), bwd)


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def bwd(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return Node(av * bv, (a, b), bwd)


def div(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def bwd(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape)

    return Node(av / bv, (a, b), bwd)


def _swap(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise UsageError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

        def bwd(g):
            return np.outer(g, bv), av.T @ g

        return Node(av @ bv, (a, b), bwd)
    if av.ndim == bv.ndim and av.ndim >= 2:
        if av.shape[:-2] != bv.shape[:-2] or av.shape[-1] != bv.shape[-2]:
            raise UsageError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

        def bwd(g):
            return g @ _swap(bv), _swap(av) @ g

        return Node(av @ bv, (a, b), bwd)
    raise UsageError(f"unsupported matmul ranks: {av.ndim} @ {bv.ndim}")


def transpose(a, axes: tuple) -> Node:
    a = _wrap(a)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inverse),)

    return Node(np.transpose(a.value, axes), (a,), bwd)


def transpose2d(a) -> Node:
    return transpose(a, (1, 0))


def reshape(a, shape) -> Node:
    a = _wrap(a)
    orig = a.value.shape

    def bwd(g):
        return (g.reshape(orig),)

    return Node(a.value.reshape(shape), (a,), bwd)


def broadcast_to(a, shape) -> Node:
    a = _wrap(a)
    orig = a.value.shape

    def bwd(g):
        return (_unbroadcast(g, orig),)

    return Node(np.broadcast_to(a.value, shape), (a,), bwd)


def gather_rows(a, idx) -> Node:
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    av = a.value

    def bwd(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return Node(av[idx], (a,), bwd)


def take(a, key) -> Node:
    """Basic (non-overlapping) indexing, e.g. node[:, 0, 0]."""
    a = _wrap(a)
    av = a.value

    def bwd(g):
        out = np.zeros_like(av)
        out[key] = g
        return (out,)

    return Node(np.array(av[key]), (a,), bwd)


def sum_(a, axis=None, keepdims: bool = False) -> Node:
    a = _wrap(a)
    av = a.value

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return Node(av.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def sqrt_(a) -> Node:
    a = _wrap(a)
    if np.any(a.value < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.value)

    def bwd(g):
        return (g * 0.5 / out,)

    return Node(out, (a,), bwd)


def tanh_(a) -> Node:
    a = _wrap(a)
    out = np.tanh(a.value)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return Node(out, (a,), bwd)


def sigmoid_(a) -> Node:
    a = _wrap(a)
    av = a.value
    out = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))),
                   np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return Node(out, (a,), bwd)


def relu(a) -> Node:
    """Hinge [x]+ with subgradient 0 at the kink."""
    a = _wrap(a)
    mask = a.value > 0

    def bwd(g):
        return (g * mask,)

    return Node(np.maximum(a.value, 0.0), (a,), bwd)


def softmax(a, axis: int = -1) -> Node:
    a = _wrap(a)
    av = a.value
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Node(out, (a,), bwd)


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = tuple(_wrap(n) for n in nodes)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return Node(np.stack([n.value for n in nodes], axis=axis), nodes, bwd)


def _topo(root: Node) -> list:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(root: Node, wrt: Sequence[Node]) -> list[Array]:
    """Adjoints of a scalar root w.r.t. each node in `wrt` (zeros if unused)."""
    if root.value.shape != ():
        raise UsageError(f"gradient root must be scalar, got shape {root.value.shape}")
    order = _topo(root)
    adj: dict[int, Array] = {id(root): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = adj.get(id(node))
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            pid = id(parent)
            if pid in adj:
                adj[pid] = adj[pid] + pg
            else:
                adj[pid] = pg
    return [adj.get(id(w), np.zeros_like(w.value)) for w in wrt]


def grad_of(f: Callable[..., Node], params: Sequence[Array]) -> list[Array]:
    """Gradient of a scalar-valued composition of tape primitives."""
    leaves = [leaf(p) for p in params]
    out = f(*leaves)
    if not isinstance(out, Node):
        raise UsageError("grad_of expects f to return a tape Node")
    return gradients(out, leaves)


def dot(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    return sum_(mul(a, b))


def l2norm_rows(a) -> Node:
    """Row norms along the last axis (keepdims); zero rows are a domain error."""
    a = _wrap(a)
    sq = sum_(mul(a, a), axis=-1, keepdims=True)
    if np.any(sq.value == 0.0):
        raise DomainError("zero-norm row in cosine computation")
    return sqrt_(sq)


def cosine_rows(a, b) -> Node:
    """Row-wise cosine of two equally shaped (..., d) arrays -> (...,)."""
    a, b = _wrap(a), _wrap(b)
    num = sum_(mul(a, b), axis=-1)
    den = mul(l2norm_rows(a), l2norm_rows(b))
    return div(num, reshape(den, num.value.shape))
