"""Tensor node and differentiable operations.

Every operation returns a new :class:`Tensor` holding its value and a closure
that pushes the output gradient back to the inputs. Graphs are only recorded
when at least one input requires a gradient.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, _parents=(), op: str = ""):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, op={self.op or 'leaf'})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def gradient(self) -> np.ndarray:
        """Accumulated gradient, with zeros for a node the root never reached."""
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(value, parents, backward, op):
        parents = tuple(parents)
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(value, requires_grad=needs, _parents=parents if needs else (), op=op)
        if needs:
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # Interior gradients are no longer needed.
                    node.grad = None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        return Tensor._make(a.value + b.value, (a, b), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g):
            a._accumulate(-g)
        return Tensor._make(-a.value, (a,), bw, "neg")

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.value, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.value, b.shape))
        return Tensor._make(a.value * b.value, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        out_val = a.value / b.value

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.value, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out_val / b.value, b.shape))
        return Tensor._make(out_val, (a, b), bw, "div")

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)

        def bw(g):
            a._accumulate(g * e * a.value ** (e - 1.0))
        return Tensor._make(a.value ** e, (a,), bw, f"pow{e:g}")

    def square(self):
        a = self

        def bw(g):
            a._accumulate(2.0 * g * a.value)
        return Tensor._make(a.value * a.value, (a,), bw, "square")

    def sqrt(self):
        a = self
        out_val = np.sqrt(a.value)

        def bw(g):
            a._accumulate(0.5 * g / out_val)
        return Tensor._make(out_val, (a,), bw, "sqrt")

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.value, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.value)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if a.ndim == 1:
                    gb = np.multiply.outer(a.value, g)
                else:
                    gb = np.swapaxes(a.value, -1, -2) @ (g if b.ndim > 1 else g[..., None])
                    if b.ndim == 1:
                        gb = gb[..., 0]
                b._accumulate(_unbroadcast(gb, b.shape))
        return Tensor._make(a.value @ b.value, (a, b), bw, "matmul")

    # elementwise nonlinearities --------------------------------------------
    def tanh(self):
        a = self
        out_val = np.tanh(a.value)

        def bw(g):
            a._accumulate(g * (1.0 - out_val ** 2))
        return Tensor._make(out_val, (a,), bw, "tanh")

    def relu(self):
        a = self
        mask = a.value > 0

        def bw(g):
            a._accumulate(g * mask)
        return Tensor._make(a.value * mask, (a,), bw, "relu")

    def identity(self):
        return self

    def activate(self, name: str):
        if name in ("linear", "identity", None):
            return self
        return getattr(self, name)()

    # shape ops --------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))
        return Tensor._make(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bw(g):
            a._accumulate(g.reshape(a.shape))
        return Tensor._make(a.value.reshape(shape), (a,), bw, "reshape")

    def transpose(self, *axes):
        a = self
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bw(g):
            a._accumulate(np.transpose(g, inv))
        return Tensor._make(np.transpose(a.value, axes), (a,), bw, "transpose")

    def swap_edges(self):
        """Swap the two edge axes of a (N, K, K, C) edge tensor."""
        return self.transpose(0, 2, 1, 3)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.value)
            np.add.at(full, idx, g)
            a._accumulate(full)
        return Tensor._make(a.value[idx], (a,), bw, "getitem")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)
    return Tensor._make(np.concatenate([t.value for t in tensors], axis=axis), tensors, bw,
                        "concat")


def stack_last(tensors) -> Tensor:
    return concat([t.reshape(t.shape + (1,)) for t in tensors], axis=-1)


def log2_1p(x: Tensor) -> Tensor:
    """``log2(1 + x)``."""
    x = _as_tensor(x)
    ln2 = np.log(2.0)

    def bw(g):
        x._accumulate(g / ((1.0 + x.value) * ln2))
    return Tensor._make(np.log1p(x.value) / ln2, (x,), bw, "log2_1p")


def complex_mul(a: Tensor, b: Tensor) -> Tensor:
    """Product of complex numbers stored as (..., 2) = (re, im) pairs."""
    a, b = _as_tensor(a), _as_tensor(b)
    ar, ai = a.value[..., 0], a.value[..., 1]
    br, bi = b.value[..., 0], b.value[..., 1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def bw(g):
        gr, gi = g[..., 0], g[..., 1]
        if a.requires_grad:
            ga = np.stack([gr * br + gi * bi, -gr * bi + gi * br], axis=-1)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.stack([gr * ar + gi * ai, -gr * ai + gi * ar], axis=-1)
            b._accumulate(_unbroadcast(gb, b.shape))
    return Tensor._make(out, (a, b), bw, "complex_mul")


def complex_matmul(q: np.ndarray, b: Tensor) -> Tensor:
    """``Q @ B`` for a constant complex ``Q`` (..., K, K) and ``B`` as (..., K, K, 2)."""
    qr, qi = np.real(q), np.imag(q)
    br, bi = b[..., 0], b[..., 1]
    gr = Tensor(qr) @ br - Tensor(qi) @ bi
    gi = Tensor(qr) @ bi + Tensor(qi) @ br
    return stack_last([gr, gi])
