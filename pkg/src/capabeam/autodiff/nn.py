"""Parameters and dense layers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def Parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=float), requires_grad=True)


def uniform_init(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Dense:
    """``y = x @ W.T + b`` with ``W`` stored as (out, in)."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, fan_out, fan_in))
        self.bias = Parameter(rng.uniform(-np.sqrt(1.0 / fan_in), np.sqrt(1.0 / fan_in), fan_out)) \
            if bias else None

    @property
    def shape(self):
        return self.weight.shape

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis with a single fused backward."""
    w = weight.value
    out = x.value @ w.T
    if bias is not None:
        out = out + bias.value
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            weight._accumulate(g2.T @ x.value.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x._accumulate(g @ w)
    return Tensor._make(out, parents, bw, "linear")
