"""Minimal reverse-mode autodiff over numpy arrays.

Each ``Tensor`` remembers its parents and a closure mapping the upstream gradient to
the gradients of those parents. ``backward`` walks the graph in reverse topological
order and accumulates into ``.grad`` of leaf tensors that require gradients.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.is_leaf = not self.parents
        self.name = name
        self.grad = np.zeros_like(self.value) if (requires_grad and self.is_leaf) else None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return Tensor(self.value.T, parents=(self,), backward_fn=lambda g: (g.T,))

    def item(self) -> float:
        return float(self.value)

    def __float__(self):
        return float(self.value)

    def detach(self) -> np.ndarray:
        return self.value.copy()

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    # ---------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        sa, sb = self.shape, other.shape
        return Tensor(self.value + other.value, parents=(self, other),
                      backward_fn=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, parents=(self,), backward_fn=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor(a * b, parents=(self, other),
                      backward_fn=lambda g: (_unbroadcast(g * b, a.shape),
                                             _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor(a / b, parents=(self, other),
                      backward_fn=lambda g: (_unbroadcast(g / b, a.shape),
                                             _unbroadcast(-g * a / b ** 2, b.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return Tensor(a @ b, parents=(self, other),
                      backward_fn=lambda g: (g @ b.T, a.T @ g))

    def __getitem__(self, index):
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)
        return Tensor(self.value[index], parents=(self,), backward_fn=back)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor(self.value.reshape(*shape), parents=(self,),
                      backward_fn=lambda g: (g.reshape(old),))

    # ---------------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), parents=(self,),
                      backward_fn=back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---------------------------------------------------------------- elementwise
    def exp(self) -> "Tensor":
        out = np.exp(self.value)
        return Tensor(out, parents=(self,), backward_fn=lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.value
        return Tensor(np.log(x), parents=(self,), backward_fn=lambda g: (g / x,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.value)
        return Tensor(out, parents=(self,), backward_fn=lambda g: (g * (1.0 - out ** 2),))

    def relu(self) -> "Tensor":
        on = self.value > 0
        return Tensor(np.where(on, self.value, 0.0), parents=(self,),
                      backward_fn=lambda g: (g * on,))

    # ---------------------------------------------------------------- autodiff
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not track gradients")
        if grad is None:
            if self.value.size != 1:
                raise RuntimeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.value)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents)
        upstream = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad += g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                upstream[key] = upstream[key] + pg if key in upstream else pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), parents=tensors,
                  backward_fn=lambda g: tuple(np.split(g, cuts, axis=axis)))


def logsumexp(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted log-sum-exp along ``axis`` over entries where ``mask`` is true."""
    x = as_tensor(x)
    v = x.value
    keep = np.ones(v.shape, dtype=bool) if mask is None else np.broadcast_to(mask, v.shape)
    if not np.all(keep.any(axis=axis)):
        raise ValueError("logsumexp over an empty set")
    shifted = np.where(keep, v, -np.inf)
    m = shifted.max(axis=axis, keepdims=True)
    e = np.where(keep, np.exp(shifted - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    weights = e / s

    def back(g):
        return (np.expand_dims(g, axis) * weights,)
    return Tensor(out, parents=(x,), backward_fn=back)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise x / max(||x||, eps); all-zero rows stay zero."""
    x = as_tensor(x)
    v = x.value
    norm = np.sqrt((v ** 2).sum(axis=-1, keepdims=True))
    small = norm < eps
    denom = np.where(small, eps, norm)
    y = v / denom

    def back(g):
        proj = np.where(small, 0.0, (y * g).sum(axis=-1, keepdims=True))
        return ((g - y * proj) / denom,)
    return Tensor(y, parents=(x,), backward_fn=back)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    return x - logsumexp(x, axis=1).reshape(-1, 1)
