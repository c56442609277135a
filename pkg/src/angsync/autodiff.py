"""Small reverse-mode autodiff over dense float64 arrays (0, 1 or 2-d).

Only scalar-to-tensor broadcasting is supported; every other shape pairing
must match exactly.  Subgradient conventions at kinks:

* ``relu``: derivative 0 at 0.
* ``minimum``: gradient goes to the first argument on ties.
* ``mod2pi``: derivative 1 everywhere.
"""

from __future__ import annotations

import itertools

import numpy as np

TWO_PI = 2.0 * np.pi
_counter = itertools.count()


class Node:
    """A value on the tape.  ``grad`` is filled in by :func:`backward`."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "order", "name")
    # make ndarray <op> Node dispatch to the Node's reflected operator
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim > 2:
            raise ValueError("tensors are limited to 2 dimensions")
        self.value = v
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.order = next(_counter)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return mul(self, reciprocal(other))
        return scalar_mul(self, 1.0 / float(other))

    def __getitem__(self, idx):
        return take(self, idx)


def param(value, name=None):
    """Trainable leaf."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value):
    return value if isinstance(value, Node) else Node(value)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    raise ValueError(f"cannot reduce gradient of shape {grad.shape} to {shape}")


def _check_binary(a, b, op):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = const(a), const(b)
    _check_binary(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Node(a.value + b.value, (a, b), bw)


def sub(a, b):
    a, b = const(a), const(b)
    _check_binary(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return Node(a.value - b.value, (a, b), bw)


def mul(a, b):
    """Hadamard product (or scalar times tensor)."""
    a, b = const(a), const(b)
    _check_binary(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)
    return Node(a.value * b.value, (a, b), bw)


hadamard = mul


def scalar_mul(a, c: float):
    a = const(a)
    c = float(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def reciprocal(a):
    a = const(a)
    out = 1.0 / a.value
    return Node(out, (a,), lambda g: (-g * out * out,))


def matmul(a, b):
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def bw(g):
        if b.value.ndim == 1:
            return np.outer(g, b.value), a.value.T @ g
        return g @ b.value.T, a.value.T @ g
    return Node(a.value @ b.value, (a, b), bw)


def relu(a):
    a = const(a)
    pos = a.value > 0
    return Node(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a):
    a = const(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),))


def sin(a):
    a = const(a)
    return Node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a):
    a = const(a)
    return Node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def atan2(y, x):
    y, x = const(y), const(x)
    _check_binary(y, x, "atan2")
    r2 = x.value ** 2 + y.value ** 2
    if np.any(r2 == 0):
        raise ValueError("atan2 undefined at (0, 0)")

    def bw(g):
        return (_unbroadcast(g * x.value / r2, y.shape),
                _unbroadcast(-g * y.value / r2, x.shape))
    return Node(np.arctan2(y.value, x.value), (y, x), bw)


def mod2pi(a):
    a = const(a)
    out = np.mod(a.value, TWO_PI)
    out = np.where(out >= TWO_PI, 0.0, out)
    return Node(out, (a,), lambda g: (g,))


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = const(a), const(b)
    _check_binary(a, b, "minimum")
    pick_a = a.value <= b.value

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)
    return Node(np.where(pick_a, a.value, b.value), (a, b), bw)


elementwise_min = minimum


def frobenius_norm(a):
    a = const(a)
    nrm = float(np.sqrt((a.value ** 2).sum()))

    def bw(g):
        if nrm == 0.0:
            return (np.zeros_like(a.value),)
        return (g * a.value / nrm,)
    return Node(nrm, (a,), bw)


def concat(nodes, axis=0):
    nodes = [const(x) for x in nodes]
    sizes = [x.shape[axis] for x in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))
    return Node(np.concatenate([x.value for x in nodes], axis=axis), nodes, bw)


def stack(nodes, axis=1):
    """Stack equal-shape vectors into a matrix (columns by default)."""
    nodes = [const(x) for x in nodes]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))
    return Node(np.stack([x.value for x in nodes], axis=axis), nodes, bw)


def take(a, idx):
    """Slice or gather with any numpy index; repeated indices accumulate."""
    a = const(a)
    out = a.value[idx]

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)
    return Node(out, (a,), bw)


slice_ = take


def sum_(a):
    a = const(a)
    return Node(a.value.sum(), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a):
    a = const(a)
    size = a.value.size
    return Node(a.value.mean(), (a,), lambda g: (np.full(a.shape, float(g) / size),))


def backward(loss: Node):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every node that needs it."""
    if loss.value.shape != ():
        raise ValueError("backward needs a scalar loss")
    nodes, seen, stack_ = [], set(), [loss]
    while stack_:
        v = stack_.pop()
        if id(v) in seen or not v.requires_grad:
            continue
        seen.add(id(v))
        nodes.append(v)
        stack_.extend(v.parents)
    # creation order is a topological order
    nodes.sort(key=lambda v: v.order, reverse=True)
    for v in nodes:
        v.grad = None
    loss.grad = np.ones(())
    for v in nodes:
        if v.backward_fn is None or v.grad is None:
            continue
        grads = v.backward_fn(v.grad)
        for p, gp in zip(v.parents, grads):
            if not p.requires_grad:
                continue
            gp = np.asarray(gp, dtype=np.float64)
            p.grad = gp.copy() if p.grad is None else p.grad + gp
    return [v for v in nodes if v.backward_fn is None]


def sgd_step(params, lr, weight_decay=0.0):
    """In-place ``p <- p - lr * (grad + weight_decay * p)``; missing grads count as 0."""
    for p in params:
        g = np.zeros_like(p.value) if p.grad is None else p.grad
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.value.shape}")
        p.value = p.value - lr * (g + weight_decay * p.value)
