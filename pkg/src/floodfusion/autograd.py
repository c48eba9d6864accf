"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Everything is 64-bit float and numpy-backed.  The op set is exactly what the
fusion model needs (elementwise arithmetic, matmul, reductions, reshapes,
activations); convolution / batchnorm / LSTM layers live in ``layers.py`` and
build their nodes through :func:`make_node`.
"""
from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for validation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, retain_graph: bool = False):
        """Reverse-accumulate d(self)/d(leaf) into every reachable leaf.

        `self` must be scalar.  Grads accumulate across calls until
        ``zero_grad``; the graph is freed afterwards unless `retain_graph`.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if not retain_graph and node is not self:
                node._parents = ()
                node._backward = None
        if not retain_graph:
            self._parents = ()
            self._backward = None

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return make_node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, _as_tensor(other) ** -1.0)

    def __pow__(self, p):
        x = self.data

        def back(g):
            return (g * p * x ** (p - 1),)

        return make_node(x ** p, (self,), back)

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return (g @ b.T, a.T @ g)

        return make_node(a @ b, (self, other), back)

    def __getitem__(self, idx):
        x = self.data
        basic = isinstance(idx, (int, slice)) or (
            isinstance(idx, tuple)
            and all(isinstance(i, (int, slice)) for i in idx))

        def back(g):
            out = np.zeros_like(x)
            if basic:  # basic indexing selects disjoint cells: += suffices
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return make_node(x[idx], (self,), back)

    def sum(self):
        def back(g):
            return (np.broadcast_to(g, self.data.shape).copy(),)

        return make_node(self.data.sum(), (self,), back)

    def mean(self):
        n = self.data.size

        def back(g):
            return (np.broadcast_to(g / n, self.data.shape).copy(),)

        return make_node(self.data.mean(), (self,), back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def back(g):
            return (g.reshape(old),)

        return make_node(self.data.reshape(shape), (self,), back)

    def swapaxes(self, a, b):
        def back(g):
            return (g.swapaxes(a, b),)

        return make_node(self.data.swapaxes(a, b), (self,), back)

    def flip(self, axes):
        def back(g):
            return (np.flip(g, axes),)

        return make_node(np.flip(self.data, axes), (self,), back)

    def sqrt(self, floor: float = 1e-12):
        """Elementwise sqrt; the backward denominator is floored at `floor`
        to defuse the singularity at 0 (exact-fit RMSE loss hits it)."""
        y = np.sqrt(self.data)

        def back(g):
            return (g * 0.5 / np.maximum(y, floor),)

        return make_node(y, (self,), back)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap a forward result; record the tape edge when grad is enabled."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape))

    return make_node(ad + bd, (a, b), back)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)
        return make_node(a.data * s, (a,), lambda g: (g * s,))
    b = _as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return make_node(ad * bd, (a, b), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis),
                     tuple(tensors), back)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity; `kind` is one of relu / sigmoid / tanh."""
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
