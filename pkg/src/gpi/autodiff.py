"""A small reverse-mode differentiation engine over numpy arrays.

Only the primitives needed by the policy and value losses are supported:
affine maps, tanh, exp, log, square, elementwise min, clip, and the usual
arithmetic with broadcasting against batch dimensions. Anything else raises
:class:`UnsupportedOperation` when the graph is built, never during backward.
"""
from __future__ import annotations

import numpy as np


class UnsupportedOperation(TypeError):
    """Raised when a loss uses a primitive the engine does not implement."""


def _unbroadcast(grad, shape):
    # sum out dimensions added or stretched by numpy broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "_parents", "_backward", "grad")
    __array_priority__ = 1000  # make numpy defer to Var's reflected operators

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        op = _UFUNCS.get(ufunc.__name__) if method == "__call__" and not kwargs else None
        if op is None:
            raise UnsupportedOperation(f"numpy ufunc {ufunc.__name__!r} is not a supported primitive")
        return op(*inputs)

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedOperation("implicit conversion of Var to ndarray; use .value")

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_var(other)))

    def __rsub__(self, other):
        return add(as_var(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedOperation("division by a Var is not a supported primitive")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        raise UnsupportedOperation("division by a Var is not a supported primitive")

    def __pow__(self, power):
        if power == 2:
            return square(self)
        raise UnsupportedOperation(f"power {power!r} is not a supported primitive")

    def __matmul__(self, other):
        raise UnsupportedOperation("bare matmul; use affine(x, W, b)")

    __rmatmul__ = __matmul__

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self):
        return mul(vsum(self), 1.0 / self.value.size)


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def add(a, b):
    a, b = as_var(a), as_var(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Var(a.value + b.value, (a, b), backward)


def neg(a):
    return Var(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_var(a), as_var(b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Var(a.value * b.value, (a, b), backward)


def square(a):
    return Var(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def tanh(a):
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value <= b.value

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return Var(np.where(pick_a, a.value, b.value), (a, b), backward)


def clip(a, lo, hi):
    """Clip to constant bounds; the gradient is zero wherever clipping is active."""
    if isinstance(lo, Var) or isinstance(hi, Var):
        raise UnsupportedOperation("clip bounds must be constants")
    a = as_var(a)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    inside = (a.value >= lo) & (a.value <= hi)
    return Var(np.minimum(np.maximum(a.value, lo), hi), (a,),
               lambda g: (np.where(inside, g, 0.0),))


def affine(x, W, b):
    """``x @ W + b`` for a batch ``x`` of shape (batch, in)."""
    x, W, b = as_var(x), as_var(W), as_var(b)

    def backward(g):
        return g @ W.value.T, x.value.T @ g, g.sum(axis=0)

    return Var(x.value @ W.value + b.value, (x, W, b), backward)


def vsum(a, axis=None):
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.value.sum(axis=axis), (a,), backward)


_UFUNCS = {
    "add": lambda a, b: add(a, b),
    "subtract": lambda a, b: add(a, neg(as_var(b))),
    "multiply": lambda a, b: mul(a, b),
    "negative": lambda a: neg(a),
    "square": lambda a: square(a),
    "tanh": lambda a: tanh(a),
    "exp": lambda a: exp(a),
    "log": lambda a: log(a),
    "minimum": lambda a, b: minimum(a, b),
}


def backward(root):
    """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor."""
    if root.value.size != 1:
        raise ValueError("backward requires a scalar output")
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
        stack.extend((p, False) for p in node._parents)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g


def value_and_grad(fn, arrays):
    """Evaluate ``fn(*leaves)`` and return (value, [grad per array]).

    ``fn`` must return a scalar Var built from supported primitives.
    """
    leaves = [Var(a) for a in arrays]
    out = fn(*leaves)
    if not isinstance(out, Var):
        raise UnsupportedOperation("loss did not produce a Var")
    backward(out)
    grads = [np.zeros_like(l.value) if l.grad is None else l.grad for l in leaves]
    return float(out.value), grads
