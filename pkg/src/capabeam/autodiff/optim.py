"""First-order optimizers over lists of parameter tensors."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, params, lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p in self.params:
            if p.grad is not None:
                p.value -= self.lr * p.grad

    def state_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr, "t": self.t}

    def load_state_dict(self, state: dict):
        self.lr = state["lr"]
        self.t = state["t"]


class Adam(SGD):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"kind": "adam", "lr": self.lr, "t": self.t, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict):
        super().load_state_dict(state)
        self.m = [np.array(a, float) for a in state["m"]]
        self.v = [np.array(a, float) for a in state["v"]]
