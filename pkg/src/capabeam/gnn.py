"""Edge-update graph networks and dense baselines for the three mappings.

Edge tensors have shape (N, K, K, C): batch, row index k, column index j,
channels. For the policy network the edge (k, j) carries coefficient
``B[k, j]``; row k and column j are the data-stream and user vertices.

* :class:`GNNG1` shares one parameter set across rows and columns
  (dependent permutations), with separate rules for the diagonal
  (signal) and off-diagonal (interference) edges: nine matrices per layer.
* :class:`GNNG2` has a single edge type and permits independent row and
  column permutations: three matrices per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Dense, Tensor, concat
from .autodiff.nn import linear

POLICY_DIMS = (16, 32, 64, 32, 16)
PROJ_DIMS = (4, 8, 8, 4)
VALUE_DIMS = (16, 32, 64, 64, 32, 16)
FNN_POLICY_DIMS = (256, 512, 1024, 512, 256)
FNN_PROJ_DIMS = (64, 128, 128, 64)
FNN_VALUE_DIMS = (256, 512, 1024, 1024, 512, 256)


@dataclass(frozen=True)
class NetSpec:
    role: str  # policy | proj | value
    arch: str = "gnn"  # gnn (G1 for policy, G2 otherwise), g1, g2, fnn
    hidden: tuple = ()
    output_activation: str = ""
    lr: float = 0.0

    def __post_init__(self):
        defaults = {
            "policy": (POLICY_DIMS, FNN_POLICY_DIMS, "tanh", 1e-3),
            "proj": (PROJ_DIMS, FNN_PROJ_DIMS, "relu", 1e-4),
            "value": (VALUE_DIMS, FNN_VALUE_DIMS, "linear", 1e-3),
        }
        if self.role not in defaults:
            raise ValueError(f"unknown role {self.role!r}")
        if self.arch not in ("gnn", "g1", "g2", "fnn"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        gdims, fdims, act, lr = defaults[self.role]
        if not self.hidden:
            object.__setattr__(self, "hidden", fdims if self.arch == "fnn" else gdims)
        if not self.output_activation:
            object.__setattr__(self, "output_activation", act)
        if not self.lr:
            object.__setattr__(self, "lr", lr)
        if any(int(d) <= 0 for d in self.hidden):
            raise ValueError("hidden dims must be positive")
        object.__setattr__(self, "hidden", tuple(int(d) for d in self.hidden))

    @property
    def graph(self) -> str:
        if self.arch == "gnn":
            return "g1" if self.role == "policy" else "g2"
        return self.arch

    def to_dict(self) -> dict:
        return {"role": self.role, "arch": self.arch, "hidden": list(self.hidden),
                "output_activation": self.output_activation, "lr": self.lr}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(d["role"], d.get("arch", "gnn"), tuple(d.get("hidden", ())),
                   d.get("output_activation", ""), d.get("lr", 0.0))


# Each edge update adds its own edge to row and column aggregates, so weights
# start at 1/sqrt(3) of the usual fan-in bound to keep activations O(1) with depth.
EDGE_INIT_GAIN = 1.0 / np.sqrt(3.0)


def _edge_dense(fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool) -> Dense:
    d = Dense(fan_in, fan_out, rng, bias=bias)
    d.weight.value *= EDGE_INIT_GAIN
    return d


def _eye_mask(K: int) -> np.ndarray:
    return np.eye(K)[None, :, :, None]


def _diag(e: Tensor, mask: np.ndarray) -> Tensor:
    """Diagonal edges (N, K, C) of an edge tensor."""
    return (e * mask).sum(axis=2)


class G1Layer:
    """Signal/interference edge update with nine weight matrices.

    Only the combiners (``W1`` for signal edges, ``W4`` for interference
    edges) carry a bias.
    """

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.W = [_edge_dense(fan_in, fan_out, rng, bias=(i in (0, 3))) for i in range(9)]

    def parameters(self):
        return [p for d in self.W for p in d.parameters()]

    def __call__(self, e: Tensor, activation: str) -> Tensor:
        K = e.shape[1]
        mask = _eye_mask(K)
        W = self.W
        ed = _diag(e, mask)  # e_kk            (N, K, C)
        rs = e.sum(axis=2)  # sum_j e_kj       (N, K, C)
        cs = e.sum(axis=1)  # sum_j e_jk       (N, K, C)
        rs_o = rs - ed
        cs_o = cs - ed
        # signal edge (k, k)
        sig = W[0](ed) + linear(cs_o, W[1].weight) + linear(rs_o, W[2].weight)
        # interference edge (k, j): linear processors let the per-edge terms merge
        w_self = W[3].weight - W[5].weight - W[6].weight
        per_edge = linear(e, w_self, W[3].bias) - linear(e.swap_edges(), W[4].weight)
        row_term = linear(rs_o, W[5].weight) + linear(ed, W[7].weight)  # indexed by k
        col_term = (linear(rs_o, W[4].weight) + linear(cs_o, W[6].weight)
                    + linear(ed, W[8].weight))  # indexed by j
        N, _, _, C = per_edge.shape
        intf = per_edge + row_term.reshape(N, K, 1, C) + col_term.reshape(N, 1, K, C)
        out = intf * (1.0 - mask) + sig.reshape(N, K, 1, C) * mask
        return out.activate(activation)

    def reference(self, e: np.ndarray, activation: str) -> np.ndarray:
        """Loop transcription of the update rule, used as a test oracle."""
        N, K, _, _ = e.shape
        Wv = [d.weight.value for d in self.W]
        b1 = self.W[0].bias.value
        b4 = self.W[3].bias.value
        out = np.zeros((N, K, K, Wv[0].shape[0]))
        for n in range(N):
            for k in range(K):
                for j in range(K):
                    if k == j:
                        acc = Wv[0] @ e[n, k, k] + b1
                        for i in range(K):
                            if i != k:
                                acc = acc + Wv[1] @ e[n, i, k] + Wv[2] @ e[n, k, i]
                    else:
                        acc = Wv[3] @ e[n, k, j] + b4 + Wv[7] @ e[n, k, k] + Wv[8] @ e[n, j, j]
                        for i in range(K):
                            if i not in (j, k):
                                acc = acc + Wv[4] @ e[n, j, i] + Wv[5] @ e[n, k, i] \
                                    + Wv[6] @ e[n, i, j]
                    out[n, k, j] = acc
        return _np_act(out, activation)


class G2Layer:
    """Single edge type: combiner plus same-row and same-column aggregators."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.W = [_edge_dense(fan_in, fan_out, rng, bias=(i == 0)) for i in range(3)]

    def parameters(self):
        return [p for d in self.W for p in d.parameters()]

    def __call__(self, e: Tensor, activation: str) -> Tensor:
        W = self.W
        N, K, _, _ = e.shape
        w_self = W[0].weight - W[1].weight - W[2].weight
        per_edge = linear(e, w_self, W[0].bias)
        row = linear(e.sum(axis=2), W[1].weight)  # sum_i e_ki, indexed by k
        col = linear(e.sum(axis=1), W[2].weight)  # sum_i e_ij, indexed by j
        C = per_edge.shape[-1]
        out = per_edge + row.reshape(N, K, 1, C) + col.reshape(N, 1, K, C)
        return out.activate(activation)

    def reference(self, e: np.ndarray, activation: str) -> np.ndarray:
        N, K, _, _ = e.shape
        Wv = [d.weight.value for d in self.W]
        out = np.zeros((N, K, K, Wv[0].shape[0]))
        for n in range(N):
            for k in range(K):
                for j in range(K):
                    acc = Wv[0] @ e[n, k, j] + self.W[0].bias.value
                    for i in range(K):
                        if i != j:
                            acc = acc + Wv[1] @ e[n, k, i]
                        if i != k:
                            acc = acc + Wv[2] @ e[n, i, j]
                    out[n, k, j] = acc
        return _np_act(out, activation)


def _np_act(x, name):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


class EdgeGNN:
    """Stack of edge-update layers; hidden layers use relu."""

    layer_cls = None

    def __init__(self, fan_in: int, hidden, fan_out: int, output_activation: str,
                 rng: np.random.Generator):
        dims = [fan_in, *hidden, fan_out]
        self.layers = [self.layer_cls(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.output_activation = output_activation

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def matrices_per_layer(self) -> int:
        return len(self.layers[0].W)

    def __call__(self, e: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            e = layer(e, self.output_activation if last else "relu")
        return e


class GNNG1(EdgeGNN):
    layer_cls = G1Layer


class GNNG2(EdgeGNN):
    layer_cls = G2Layer


class FNN:
    """Plain dense stack on flattened inputs; input size fixes K."""

    def __init__(self, fan_in: int, hidden, fan_out: int, output_activation: str,
                 rng: np.random.Generator):
        dims = [fan_in, *hidden, fan_out]
        self.layers = [Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.output_activation = output_activation
        self.fan_in = fan_in

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.fan_in:
            raise ValueError(f"FNN expects {self.fan_in} inputs, got {x.shape[-1]}")
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            x = layer(x).activate(self.output_activation if last else "relu")
        return x


def count_parameters(params) -> int:
    return int(sum(p.value.size for p in params))


# -- role wrappers -----------------------------------------------------------

@dataclass
class FeatureScaler:
    """Affine map of user positions into roughly [-1, 1] per coordinate."""

    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 30.0]))
    half_range: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))

    def __call__(self, S: np.ndarray) -> np.ndarray:
        return (np.asarray(S, float) - self.center) / self.half_range

    @classmethod
    def from_region(cls, low, high) -> "FeatureScaler":
        low, high = np.asarray(low, float), np.asarray(high, float)
        half = (high - low) / 2
        half[half == 0] = 1.0
        return cls((high + low) / 2, half)

    def to_dict(self):
        return {"center": self.center.tolist(), "half_range": self.half_range.tolist()}


def policy_features(S: np.ndarray) -> np.ndarray:
    """Edge input for the policy graph: ``s_k`` on edge (k, k), zeros elsewhere."""
    N, K, D = S.shape
    e = np.zeros((N, K, K, D))
    idx = np.arange(K)
    e[:, idx, idx, :] = S
    return e


def coupled_features(S: np.ndarray, B: Tensor) -> Tensor:
    """Edge input ``[s_k, re b_kj, im b_kj]`` for the proj/value graphs."""
    N, K, D = S.shape
    s = np.broadcast_to(S[:, :, None, :], (N, K, K, D))
    return concat([Tensor(s), B], axis=-1)


def g1_coupled_features(S: np.ndarray, B: Tensor) -> Tensor:
    """Proj/value inputs on the signal/interference graph: positions on the diagonal only."""
    N, K, D = S.shape
    return concat([Tensor(policy_features(S)), B], axis=-1)


class PolicyNet:
    """Positions (N, K, 3) -> coefficients (N, K, K, 2) in (-1, 1)."""

    def __init__(self, spec: NetSpec, K: int, rng: np.random.Generator):
        self.spec = spec
        self.K = K
        if spec.graph == "g1":
            self.net = GNNG1(3, spec.hidden, 2, spec.output_activation, rng)
        elif spec.graph == "g2":
            self.net = GNNG2(3, spec.hidden, 2, spec.output_activation, rng)
        else:
            self.net = FNN(3 * K, spec.hidden, 2 * K * K, spec.output_activation, rng)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, S: np.ndarray) -> Tensor:
        N, K, _ = S.shape
        if self.spec.graph == "fnn":
            return self.net(Tensor(S.reshape(N, -1))).reshape(N, K, K, 2)
        return self.net(Tensor(policy_features(S)))


class ProjNet:
    """(positions, coefficients) -> per-stream power estimates (N, K)."""

    def __init__(self, spec: NetSpec, K: int, rng: np.random.Generator):
        self.spec = spec
        self.K = K
        if spec.graph == "g2":
            self.net = GNNG2(5, spec.hidden, 1, spec.output_activation, rng)
        elif spec.graph == "g1":
            self.net = GNNG1(5, spec.hidden, 1, spec.output_activation, rng)
        else:
            self.net = FNN(3 * K + 2 * K * K, spec.hidden, K, spec.output_activation, rng)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, S: np.ndarray, B: Tensor) -> Tensor:
        N, K, _ = S.shape
        if self.spec.graph == "fnn":
            x = concat([Tensor(S.reshape(N, -1)), B.reshape(N, -1)], axis=-1)
            return self.net(x)
        if self.spec.graph == "g2":
            out = self.net(coupled_features(S, B))
            return out.mean(axis=1)[..., 0]  # average over incident edges of each column
        out = self.net(g1_coupled_features(S, B))
        return _diag(out, _eye_mask(K))[..., 0]


class ValueNet:
    """(positions, projected coefficients) -> gain matrix (N, K, K, 2)."""

    def __init__(self, spec: NetSpec, K: int, rng: np.random.Generator):
        self.spec = spec
        self.K = K
        if spec.graph == "g2":
            self.net = GNNG2(5, spec.hidden, 2, spec.output_activation, rng)
        elif spec.graph == "g1":
            self.net = GNNG1(5, spec.hidden, 2, spec.output_activation, rng)
        else:
            self.net = FNN(3 * K + 2 * K * K, spec.hidden, 2 * K * K, spec.output_activation, rng)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, S: np.ndarray, B: Tensor) -> Tensor:
        N, K, _ = S.shape
        if self.spec.graph == "fnn":
            x = concat([Tensor(S.reshape(N, -1)), B.reshape(N, -1)], axis=-1)
            return self.net(x).reshape(N, K, K, 2)
        if self.spec.graph == "g2":
            return self.net(coupled_features(S, B))
        return self.net(g1_coupled_features(S, B))


NETWORKS = {"policy": PolicyNet, "proj": ProjNet, "value": ValueNet}


def build_network(spec: NetSpec, K: int, seed: int):
    return NETWORKS[spec.role](spec, K, np.random.default_rng(seed))
