"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only the operations the screening network and its losses need are
provided. Values keep the dtype of the parameters they are built from, so
a float64 copy of a model gives a float64 graph for gradient checks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------- plumbing
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
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
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed after propagation
                node.grad = None

    def _const(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other):
        other = self._const(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return _node(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return _node(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        return self + (-self._const(other))

    def __rsub__(self, other):
        return self._const(other) + (-self)

    def __mul__(self, other):
        other = self._const(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return _node(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._const(other)
        if not other.requires_grad:
            return self * (1.0 / other.data)
        a, b = self, other
        out = a.data / b.data

        def back(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

        return _node(out, (a, b), back)

    def square(self):
        a = self
        return _node(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return _node(out, (a,), lambda g: a._accum(g * 0.5 / out))

    def __matmul__(self, other):
        a, b = self, self._const(other)

        def back(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

        return _node(a.data @ b.data, (a, b), back)

    # -------------------------------------------------------------- shaping
    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape).copy())

        return _node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[i] for i in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return _node(a.data.reshape(*shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return _node(a.data[idx], (a,), back)

    @property
    def T(self):
        a = self
        return _node(a.data.T, (a,), lambda g: a._accum(g.T))


def _node(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr, requires_grad)


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            if t.requires_grad:
                t._accum(part)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors, axis=0) -> Tensor:
    tensors = list(tensors)

    def back(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


# ----------------------------------------------------------- nonlinearities


def mish_array(x: np.ndarray) -> np.ndarray:
    """x * tanh(softplus(x)) using tanh(log1p(e)) = n / (n + 2), n = e * (e + 2)."""
    e = np.minimum(x, 20.0)
    np.exp(e, out=e)
    n = e + 2.0
    n *= e
    d = n + 2.0
    np.divide(n, d, out=n)
    n *= x
    return n


def _mish_grad(x: np.ndarray) -> np.ndarray:
    e = np.exp(np.minimum(x, 20.0))
    n = e * (e + 2.0)
    d = n + 2.0
    r = n / d
    # d/dx [n/(n+2)] = 2 n' / (n+2)^2, n' = 2 e (e + 1)
    dr = 4.0 * e * (e + 1.0) / (d * d)
    return r + x * dr


def mish(x: Tensor) -> Tensor:
    return _node(mish_array(x.data), (x,), lambda g: x._accum(g * _mish_grad(x.data)))


def softplus_array(x):
    return np.logaddexp(0.0, x)


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), stable for large |x|."""
    out = -softplus_array(-x.data)
    # derivative is sigmoid(-x) = 1 - sigmoid(x)
    return _node(out, (x,), lambda g: x._accum(g * expit(-x.data)))
