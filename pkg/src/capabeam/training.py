"""Three-network training: policy, power-projection and gain-value networks.

Internally all learned quantities use scaled units. With ``q_ref`` the Gram
diagonal of a user at the region center, networks see ``Q / q_ref``,
projected coefficients ``B_bar * sqrt(q_ref)`` and gains ``G / sqrt(q_ref)``,
so every input and target is of order one. The SNR scale becomes
``zeta * q_ref``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import SGD, Adam, Tensor, log2_1p, no_grad
from .autodiff.tensor import complex_matmul
from .beamfield import gain_matrix, power_vector, spectral_efficiency
from .gnn import FeatureScaler, NetSpec, build_network, count_parameters
from .physics import Aperture, PhysicalConstants, Scenario
from .quadrature import batch_gram, default_grid, gauss_legendre_grid

log = logging.getLogger(__name__)


def save_npz(path, **arrays) -> None:
    """``np.savez`` with fixed zip timestamps, so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(value), allow_pickle=False)

SCHEDULES = ("phased", "alternative", "phased_plus_alternative")
POWER_EPS = 1e-6


class TrainingDivergence(FloatingPointError):
    pass


# -- data ---------------------------------------------------------------------

@dataclass
class Dataset:
    """User positions for many scenes sharing one aperture and SNR scale."""

    positions: np.ndarray  # (N, K, 3)
    template: Scenario
    seed: int
    splits: dict = field(default_factory=dict)  # name -> (start, stop)
    _grams: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.positions)

    @property
    def K(self) -> int:
        return self.positions.shape[1]

    def scene(self, i: int) -> Scenario:
        return self.template.with_users(self.positions[i])

    def indices(self, split: str) -> np.ndarray:
        start, stop = self.splits[split]
        return np.arange(start, stop)

    def subset(self, split: str) -> "Dataset":
        idx = self.indices(split)
        sub = Dataset(self.positions[idx], self.template, self.seed, {split: (0, len(idx))})
        for tag, q in self._grams.items():
            sub._grams[tag] = q[idx]
        return sub

    def grams(self, n_nodes: int | None = None) -> np.ndarray:
        """Gram matrices of every scene on the label grid (cached)."""
        grid = default_grid(self.template.aperture) if n_nodes is None else \
            gauss_legendre_grid(self.template.aperture, n_nodes, n_nodes)
        if grid.tag not in self._grams:
            self._grams[grid.tag] = batch_gram(self.positions, self.template, grid)
        return self._grams[grid.tag]

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.positions).tobytes())
        h.update(json.dumps(self.template.to_dict() | {"users": None}, sort_keys=True).encode())
        return h.hexdigest()[:16]

    def save(self, path):
        meta = {"template": self.template.to_dict(), "seed": self.seed, "splits": self.splits}
        save_npz(path, positions=self.positions, meta=json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as f:
            meta = json.loads(str(f["meta"]))
            positions = f["positions"]
        splits = {k: tuple(v) for k, v in meta["splits"].items()}
        return cls(positions, Scenario.from_dict(meta["template"]), meta["seed"], splits)


def generate_scenarios(count: int, K: int, seed: int, low=(-1.0, -1.0, 30.0),
                       high=(1.0, 1.0, 30.0), template: Scenario | None = None,
                       splits: dict | None = None) -> Dataset:
    """I.i.d. uniform user positions in an axis-aligned box."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    low, high = np.asarray(low, float), np.asarray(high, float)
    positions = low + (high - low) * rng.random((count, K, 3))
    if template is None:
        template = Scenario(users=positions[0], aperture=Aperture.square(0.25))
    if splits is None:
        splits = {"train": (0, count)}
    return Dataset(positions, template, seed, dict(splits))


def make_dataset(n_train: int, n_val: int, n_test: int, K: int, seed: int, zeta: float = 1e5,
                 area: float = 0.25, wavelength: float = 0.0107, low=(-1.0, -1.0, 30.0),
                 high=(1.0, 1.0, 30.0), normal=(0.0, 0.0, 1.0)) -> Dataset:
    total = n_train + n_val + n_test
    rng = np.random.default_rng(seed)
    low, high = np.asarray(low, float), np.asarray(high, float)
    positions = low + (high - low) * rng.random((total, K, 3))
    u_axis = (1.0, 0.0, 0.0) if abs(normal[0]) < 0.9 else (0.0, 1.0, 0.0)
    template = Scenario(users=positions[0],
                        aperture=Aperture.square(area, normal=normal, u_axis=u_axis),
                        constants=PhysicalConstants(wavelength), zeta=zeta)
    splits = {"train": (0, n_train), "val": (n_train, n_train + n_val),
              "test": (n_train + n_val, total)}
    return Dataset(positions, template, seed, splits)


def reference_gram_scale(template: Scenario, low, high) -> float:
    """Gram diagonal of a broadside user at the center of the region."""
    center = (np.asarray(low, float) + np.asarray(high, float)) / 2
    grid = gauss_legendre_grid(template.aperture, 16, 16)
    q = batch_gram(center[None, None, :], template, grid)
    return float(q[0, 0, 0].real)


# -- labels ---------------------------------------------------------------------

def proj_labels(q: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Exact per-stream powers through the Gram route."""
    return power_vector(q, B)


def value_labels(q: np.ndarray, B_bar: np.ndarray) -> np.ndarray:
    """Exact gain matrices through the Gram route."""
    return gain_matrix(q, B_bar)


def to_pairs(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


def from_pairs(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1j * x[..., 1]


# -- differentiable pieces -----------------------------------------------------

def gains_to_loss(G: Tensor, zeta: float) -> Tensor:
    """Negative mean sum rate from gain pairs (N, K, K, 2)."""
    K = G.shape[1]
    g2 = (G * G).sum(axis=-1) * zeta  # (N, K, K)
    eye = np.eye(K)[None]
    sig = (g2 * eye).sum(axis=-1)
    interf = g2.sum(axis=-1) - sig
    rate = log2_1p(sig / (interf + 1.0)).sum(axis=-1)
    return -rate.mean()


def policy_loss(G: Tensor, zeta: float) -> Tensor:
    return gains_to_loss(G, zeta)


def exact_power(Qs: np.ndarray, B: Tensor) -> Tensor:
    """Differentiable ``p_k = b_k^H Q b_k`` with B as (N, K, K, 2)."""
    QB = complex_matmul(Qs, B)
    return (B * QB).sum(axis=-1).sum(axis=1)


def exact_gains(Qs: np.ndarray, B: Tensor) -> Tensor:
    return complex_matmul(Qs, B)


def project(B: Tensor, p_hat: Tensor, p_max: float = 1.0, mode: str = "total") -> Tensor:
    """Scale coefficients to the budget given (estimated) stream powers.

    ``mode="total"`` rescales all streams jointly; ``mode="equal"`` gives each
    stream ``p_max / K``.
    """
    N, K = p_hat.shape
    if mode == "total":
        total = p_hat.sum(axis=-1, keepdims=True) + POWER_EPS
        return B * ((p_max / total) ** 0.5).reshape(N, 1, 1, 1)
    if mode == "equal":
        scale = (p_max / K / (p_hat + POWER_EPS)) ** 0.5
        return B * scale.reshape(N, 1, K, 1)
    raise ValueError(f"unknown power mode {mode!r}")


def project_numpy(B: np.ndarray, p: np.ndarray, p_max: float = 1.0, mode: str = "total"):
    """Complex-array counterpart of :func:`project` (no epsilon, zero stays zero)."""
    K = p.shape[-1]
    if mode == "total":
        total = p.sum(axis=-1)
        scale = np.sqrt(p_max / np.where(total > 0, total, 1.0))
        return B * scale[..., None, None]
    if mode == "equal":
        scale = np.sqrt(p_max / K / np.where(p > 0, p, 1.0))
        return B * scale[..., None, :]
    raise ValueError(f"unknown power mode {mode!r}")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Batch mean of the squared error summed over all output entries."""
    diff = pred - target
    sq = diff * diff
    return sq.reshape(sq.shape[0], -1).sum(axis=-1).mean()


# -- configuration ---------------------------------------------------------------

@dataclass
class TrainConfig:
    K: int = 4
    n_train: int = 5000
    n_val: int = 100
    n_test: int = 500
    n_epochs: int = 500
    batch_size: int = 32
    schedule: str = "phased_plus_alternative"
    pretrain_samples: int = 20000
    pretrain_epochs: int = 30
    pretrain_batch: int = 64
    surrogate_replay: bool = True
    arch: str = "gnn"
    policy_lr: float | None = None
    proj_lr: float | None = None
    value_lr: float | None = None
    optimizer: str = "adam"
    oracle: bool = False
    power_mode: str = "total"  # or "equal"
    label_nodes: int = 32
    val_every: int = 10
    select_by: str = "val_se"  # or "train_loss"
    zeta: float = 1e5
    area: float = 0.25
    wavelength: float = 0.0107
    region_low: tuple = (-1.0, -1.0, 30.0)
    region_high: tuple = (1.0, 1.0, 30.0)
    normal: tuple = (0.0, 0.0, 1.0)
    seed: int = 0
    data_seed: int | None = None

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        for name in ("K", "n_train", "n_epochs", "batch_size", "pretrain_epochs"):
            if getattr(self, name) < (0 if name == "pretrain_epochs" else 1):
                raise ValueError(f"{name} must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.power_mode not in ("total", "equal"):
            raise ValueError("power_mode must be 'total' or 'equal'")
        if self.select_by not in ("val_se", "train_loss"):
            raise ValueError("select_by must be 'val_se' or 'train_loss'")
        self.region_low = tuple(float(x) for x in self.region_low)
        self.region_high = tuple(float(x) for x in self.region_high)
        self.normal = tuple(float(x) for x in self.normal)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dataset(self) -> Dataset:
        return make_dataset(self.n_train, self.n_val, self.n_test, self.K,
                            self.seed if self.data_seed is None else self.data_seed,
                            zeta=self.zeta, area=self.area, wavelength=self.wavelength,
                            low=self.region_low, high=self.region_high, normal=self.normal)


# -- trainer ---------------------------------------------------------------------

def _snapshot(params) -> list:
    return [p.value.copy() for p in params]


def _restore(params, values):
    for p, v in zip(params, values):
        p.value[...] = v


@dataclass
class EpochRecord:
    epoch: int
    policy_loss: float
    proj_mse: float
    value_mse: float
    val_se: float
    wall_time: float


class Trainer:
    """Owns the three networks, their optimizers and the scaled-unit data."""

    def __init__(self, config: TrainConfig, dataset: Dataset | None = None):
        self.config = config
        self.data = dataset if dataset is not None else config.dataset()
        K = self.data.K
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.rng = np.random.default_rng(seeds[3])
        self.specs = {
            role: NetSpec(role, config.arch,
                          lr=getattr(config, f"{role}_lr") or 0.0)
            for role in ("policy", "proj", "value")
        }
        self.nets = {role: build_network(self.specs[role], K,
                                         int(s.generate_state(1)[0]))
                     for role, s in zip(("policy", "proj", "value"), seeds)}
        opt_cls = Adam if config.optimizer == "adam" else SGD
        self.opts = {role: opt_cls(net.parameters(), lr=self.specs[role].lr)
                     for role, net in self.nets.items()}
        self.scaler = FeatureScaler.from_region(config.region_low, config.region_high)
        self.q_ref = reference_gram_scale(self.data.template, config.region_low,
                                          config.region_high)
        self.zeta_s = self.data.template.zeta * self.q_ref
        self.p_max = self.data.template.p_max
        self.Q = self.data.grams(config.label_nodes)
        self.Qs = self.Q / self.q_ref
        self.S = self.scaler(self.data.positions)
        self.history: list[EpochRecord] = []
        self.best = {"score": -np.inf, "epoch": -1, "policy": _snapshot(self.policy.parameters())}
        self.best_loss = 0.0  # loss-based selection starts from 0

    # handles
    @property
    def policy(self):
        return self.nets["policy"]

    @property
    def proj(self):
        return self.nets["proj"]

    @property
    def value(self):
        return self.nets["value"]

    # forward compositions ------------------------------------------------
    def estimated_gains(self, idx, oracle: bool | None = None):
        """Policy -> projection -> gains, differentiable in the policy parameters."""
        oracle = self.config.oracle if oracle is None else oracle
        S = self.S[idx]
        Qs = self.Qs[idx]
        B = self.policy(S)
        p_hat = exact_power(Qs, B) if oracle else self.proj(S, B)
        B_bar = project(B, p_hat, self.p_max, self.config.power_mode)
        G = exact_gains(Qs, B_bar) if oracle else self.value(S, B_bar)
        return B, B_bar, G

    def policy_step(self, idx) -> float:
        for p in self.policy.parameters():
            p.grad = None
        _, _, G = self.estimated_gains(idx)
        loss = policy_loss(G, self.zeta_s)
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"policy loss is {loss.value}")
        loss.backward()
        # Proj/value nets are frozen here: only the policy optimizer steps.
        for role in ("proj", "value"):
            for p in self.nets[role].parameters():
                p.grad = None
        self.opts["policy"].step()
        return float(loss.value)

    def supervised_step(self, role: str, S: np.ndarray, B: np.ndarray, target: np.ndarray,
                        update: bool = True) -> float:
        """One MSE step of the proj (target (N, K)) or value (target (N, K, K, 2)) net."""
        net = self.nets[role]
        for p in net.parameters():
            p.grad = None
        pred = net(S, Tensor(B))
        loss = mse_loss(pred, target)
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"{role} loss is {loss.value}")
        if update:
            loss.backward()
            self.opts[role].step()
        return float(loss.value)

    def proj_batch(self, idx, B: np.ndarray):
        return self.S[idx], B, proj_labels(self.Qs[idx], from_pairs(B))

    def value_batch(self, idx, B_bar: np.ndarray):
        return self.S[idx], B_bar, to_pairs(value_labels(self.Qs[idx], from_pairs(B_bar)))

    # pretraining -------------------------------------------------------------
    def random_coefficients(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Random raw coefficients and their value-net inputs.

        Entries are uniform in (-1, 1) per real channel; half the samples are
        rescaled onto the power boundary.
        """
        n, K = len(idx), self.data.K
        B = self.rng.uniform(-1, 1, (n, K, K, 2))
        on_boundary = self.rng.random(n) < 0.5
        p = proj_labels(self.Qs[idx], from_pairs(B))
        B_boundary = to_pairs(project_numpy(from_pairs(B), p, self.p_max, self.config.power_mode))
        mask = on_boundary[:, None, None, None]
        B_proj_in = np.where(mask, B_boundary, B)
        # The value net always sees projected coefficients, possibly with a
        # mis-estimated power, so the off-boundary half is jittered around it.
        jitter = self.rng.uniform(0.5, 1.5, (n, 1, K, 1))
        B_value_in = np.where(mask, B_boundary, B_boundary * jitter)
        return B_proj_in, B_value_in

    def pretrain(self, n_samples: int | None = None, epochs: int | None = None):
        cfg = self.config
        n_samples = cfg.pretrain_samples if n_samples is None else n_samples
        epochs = cfg.pretrain_epochs if epochs is None else epochs
        train_idx = self.data.indices("train")
        scene_idx = self.rng.choice(train_idx, size=n_samples, replace=True)
        B_p, B_v = self.random_coefficients(scene_idx)
        trace = []
        for ep in range(epochs):
            order = self.rng.permutation(n_samples)
            lp = lv = 0.0
            for start in range(0, n_samples, cfg.pretrain_batch):
                sel = order[start:start + cfg.pretrain_batch]
                idx = scene_idx[sel]
                lp += self.supervised_step("proj", *self.proj_batch(idx, B_p[sel])) * len(sel)
                lv += self.supervised_step("value", *self.value_batch(idx, B_v[sel])) * len(sel)
            trace.append((lp / n_samples, lv / n_samples))
        return trace

    # evaluation --------------------------------------------------------------
    def policy_coefficients(self, idx) -> np.ndarray:
        with no_grad():
            return from_pairs(self.policy(self.S[idx]).value)

    def exact_se(self, idx, B: np.ndarray | None = None) -> np.ndarray:
        """Per-scene SE after projecting with exact powers."""
        if B is None:
            B = self.policy_coefficients(idx)
        Qs = self.Qs[idx]
        p = power_vector(Qs, B)
        ok = np.all(p > 0, axis=-1) if self.config.power_mode == "equal" else p.sum(-1) > 0
        Bb = project_numpy(B, p, self.p_max, self.config.power_mode)
        se = spectral_efficiency(gain_matrix(Qs, Bb), self.zeta_s)
        return np.where(ok, se, 0.0)

    def estimated_se(self, idx) -> np.ndarray:
        """SE as predicted by the proj/value nets (what the policy optimizes)."""
        with no_grad():
            _, _, G = self.estimated_gains(idx)
        g = from_pairs(G.value)
        return spectral_efficiency(g, self.zeta_s)

    def validation_se(self) -> float:
        idx = self.data.indices("val") if "val" in self.data.splits else \
            self.data.indices("train")[:100]
        return float(self.exact_se(idx).mean())

    def surrogate_errors(self, idx, B: np.ndarray | None = None) -> dict:
        """Relative MSE of the proj/value nets at given (default: policy) coefficients."""
        if B is None:
            with no_grad():
                B = self.policy(self.S[idx]).value
        Qs = self.Qs[idx]
        p = proj_labels(Qs, from_pairs(B))
        with no_grad():
            p_hat = self.proj(self.S[idx], Tensor(B)).value
        B_bar = to_pairs(project_numpy(from_pairs(B), p, self.p_max, self.config.power_mode))
        g = to_pairs(value_labels(Qs, from_pairs(B_bar)))
        with no_grad():
            g_hat = self.value(self.S[idx], Tensor(B_bar)).value
        return {
            "proj_rel_mse": float(np.mean(np.sum((p_hat - p) ** 2, -1)) / np.mean(np.sum(p ** 2, -1))),
            "value_rel_mse": float(np.mean(np.sum((g_hat - g) ** 2, (-1, -2, -3)))
                                   / np.mean(np.sum(g ** 2, (-1, -2, -3)))),
        }

    # schedules -----------------------------------------------------------------
    def _batches(self):
        idx = self.data.indices("train")
        order = self.rng.permutation(idx)
        bs = self.config.batch_size
        return [order[i:i + bs] for i in range(0, len(order), bs)]

    def _maybe_select(self, epoch: int, train_loss: float, force_eval: bool = False):
        cfg = self.config
        val_se = np.nan
        if force_eval or epoch % cfg.val_every == 0 or epoch == 1:
            val_se = self.validation_se()
        if cfg.select_by == "val_se":
            if np.isfinite(val_se) and val_se > self.best["score"]:
                self.best = {"score": val_se, "epoch": epoch,
                             "policy": _snapshot(self.policy.parameters())}
        elif train_loss < self.best_loss or self.best["epoch"] < 0:
            self.best_loss = train_loss
            self.best = {"score": -train_loss, "epoch": epoch,
                         "policy": _snapshot(self.policy.parameters())}
        return val_se

    def run_epoch(self, alternative: bool) -> tuple[float, float, float]:
        pl = pm = vm = 0.0
        n = 0
        for idx in self._batches():
            pl += self.policy_step(idx) * len(idx)
            if alternative:
                with no_grad():
                    B = self.policy(self.S[idx]).value
                with no_grad():
                    B_bar = project(Tensor(B), self.proj(self.S[idx], Tensor(B)), self.p_max,
                                    self.config.power_mode).value
                ii = idx
                if self.config.surrogate_replay:
                    # Policy outputs barely vary across scenes; fitting only them lets the
                    # surrogates forget their dependence on B, so mix in random draws.
                    B_rand, B_bar_rand = self.random_coefficients(idx)
                    ii = np.concatenate([idx, idx])
                    B = np.concatenate([B, B_rand])
                    B_bar = np.concatenate([B_bar, B_bar_rand])
                pm += self.supervised_step("proj", *self.proj_batch(ii, B)) * len(idx)
                vm += self.supervised_step("value", *self.value_batch(ii, B_bar)) * len(idx)
            n += len(idx)
        return pl / n, pm / n, vm / n

    def fit(self, n_epochs: int | None = None, callback=None):
        """Run the configured schedule; returns the epoch history."""
        cfg = self.config
        n_epochs = cfg.n_epochs if n_epochs is None else n_epochs
        t0 = time.perf_counter()
        if cfg.schedule in ("phased", "phased_plus_alternative") and not cfg.oracle:
            self.pretrain()
        alternative = cfg.schedule != "phased" and not cfg.oracle
        val = self._maybe_select(0, np.inf, force_eval=True)
        self.history.append(EpochRecord(0, np.nan, np.nan, np.nan, val, time.perf_counter() - t0))
        for epoch in range(1, n_epochs + 1):
            pl, pm, vm = self.run_epoch(alternative)
            val = self._maybe_select(epoch, pl, force_eval=epoch == n_epochs)
            rec = EpochRecord(epoch, pl, pm if alternative else np.nan,
                              vm if alternative else np.nan, val, time.perf_counter() - t0)
            self.history.append(rec)
            if callback is not None:
                callback(rec)
            if np.isfinite(val):
                log.info("epoch %d loss %.4f val_se %.4f", epoch, pl, val)
        return self.history

    def load_best(self):
        _restore(self.policy.parameters(), self.best["policy"])

    # persistence -----------------------------------------------------------------
    def state_arrays(self) -> dict:
        arrays = {}
        for role, net in self.nets.items():
            for i, p in enumerate(net.parameters()):
                arrays[f"{role}/{i}"] = p.value
        return arrays

    def save(self, path):
        meta = {
            "version": 1,
            "config": self.config.to_dict(),
            "specs": {r: s.to_dict() for r, s in self.specs.items()},
            "scaler": self.scaler.to_dict(),
            "q_ref": self.q_ref,
            "best_epoch": self.best["epoch"],
            "history": [asdict(r) for r in self.history],
            "optimizer_steps": {r: o.t for r, o in self.opts.items()},
        }
        arrays = self.state_arrays()
        for role, opt in self.opts.items():
            if isinstance(opt, Adam):
                for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                    arrays[f"adam/{role}/m/{i}"] = m
                    arrays[f"adam/{role}/v/{i}"] = v
        save_npz(path, meta=json.dumps(meta, default=float), **arrays)

    @classmethod
    def load(cls, path, dataset: Dataset | None = None) -> "Trainer":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        with np.load(path) as f:
            meta = json.loads(str(f["meta"]))
            arrays = {k: f[k] for k in f.files if k != "meta"}
        config = TrainConfig.from_dict(_tuples(meta["config"]))
        trainer = cls(config, dataset)
        for role, net in trainer.nets.items():
            for i, p in enumerate(net.parameters()):
                p.value[...] = arrays[f"{role}/{i}"]
        for role, opt in trainer.opts.items():
            opt.t = meta.get("optimizer_steps", {}).get(role, 0)
            if isinstance(opt, Adam) and f"adam/{role}/m/0" in arrays:
                opt.m = [arrays[f"adam/{role}/m/{i}"].copy() for i in range(len(opt.m))]
                opt.v = [arrays[f"adam/{role}/v/{i}"].copy() for i in range(len(opt.v))]
        trainer.history = [EpochRecord(**r) for r in meta.get("history", [])]
        trainer.best = {"score": np.nan, "epoch": meta.get("best_epoch", -1),
                        "policy": _snapshot(trainer.policy.parameters())}
        return trainer


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def train(config: TrainConfig, dataset: Dataset | None = None, callback=None) -> Trainer:
    trainer = Trainer(config, dataset)
    trainer.fit(callback=callback)
    trainer.load_best()
    return trainer


def train_phased(config: TrainConfig, dataset=None, callback=None) -> Trainer:
    return train(_with(config, schedule="phased"), dataset, callback)


def train_alternative(config: TrainConfig, dataset=None, callback=None) -> Trainer:
    return train(_with(config, schedule="alternative"), dataset, callback)


def train_phased_plus_alternative(config: TrainConfig, dataset=None, callback=None) -> Trainer:
    return train(_with(config, schedule="phased_plus_alternative"), dataset, callback)


def _with(config: TrainConfig, **changes) -> TrainConfig:
    c = copy.deepcopy(config)
    for k, v in changes.items():
        setattr(c, k, v)
    c.__post_init__()
    return c


@dataclass
class EvalReport:
    mean_se: float
    std_se: float
    mean_se_deployed: float
    per_scene: list
    degenerate: int

    def to_dict(self):
        return asdict(self)


def evaluate_policy(trainer: Trainer, split: str = "test") -> EvalReport:
    """Exact-quadrature SE of the policy; the value net is never used.

    Two projections are reported: with exact powers (ground truth) and with
    the proj net's estimates (as deployed).
    """
    idx = trainer.data.indices(split)
    B = trainer.policy_coefficients(idx)
    Qs = trainer.Qs[idx]
    p = power_vector(Qs, B)
    degenerate = ~(np.all(p > 0, axis=-1) if trainer.config.power_mode == "equal"
                   else p.sum(axis=-1) > 0)
    se_exact = trainer.exact_se(idx, B)
    with no_grad():
        p_hat = trainer.proj(trainer.S[idx], Tensor(to_pairs(B))).value
    B_dep = from_pairs(project(Tensor(to_pairs(B)), Tensor(p_hat), trainer.p_max,
                               trainer.config.power_mode).value)
    se_dep = spectral_efficiency(gain_matrix(Qs, B_dep), trainer.zeta_s)
    se_dep = np.where(degenerate, 0.0, se_dep)
    per_scene = [{"index": int(i), "se": float(a), "se_deployed": float(b),
                  "degenerate": bool(d)}
                 for i, a, b, d in zip(idx, se_exact, se_dep, degenerate)]
    return EvalReport(float(se_exact.mean()), float(se_exact.std()), float(se_dep.mean()),
                      per_scene, int(degenerate.sum()))


def parameter_counts(trainer: Trainer) -> dict:
    return {role: count_parameters(net.parameters()) for role, net in trainer.nets.items()}


def train_value_supervised(config: TrainConfig, dataset: Dataset | None = None,
                           n_epochs: int | None = None, callback=None):
    """Fit only the value net on random projected coefficients.

    Each training scene carries one fixed random coefficient draw (the
    pretraining distribution); held-out error is measured on the test split
    with its own draws and reported as ``MSE / mean sum |g|^2``.

    Returns
    -------
    trainer : Trainer
    records : list of dict
        One per epoch with ``epoch``, ``train_mse``, ``heldout_rel_mse`` and
        cumulative ``wall_time``.
    """
    tr = Trainer(config, dataset)
    n_epochs = config.n_epochs if n_epochs is None else n_epochs
    train_idx = tr.data.indices("train")
    test_idx = tr.data.indices("test")
    _, B_train = tr.random_coefficients(train_idx)
    _, B_test = tr.random_coefficients(test_idx)
    S_test, _, g_test = tr.value_batch(test_idx, B_test)
    denom = float(np.mean(np.sum(g_test ** 2, axis=(1, 2, 3))))
    records = []
    t0 = time.perf_counter()
    bs = config.batch_size
    for epoch in range(1, n_epochs + 1):
        order = tr.rng.permutation(len(train_idx))
        total = 0.0
        for start in range(0, len(order), bs):
            sel = order[start:start + bs]
            total += tr.supervised_step("value", *tr.value_batch(train_idx[sel], B_train[sel])) \
                * len(sel)
        elapsed = time.perf_counter() - t0
        with no_grad():
            held = mse_loss(tr.value(S_test, Tensor(B_test)), g_test).value / denom
        rec = {"epoch": epoch, "train_mse": total / len(order),
               "heldout_rel_mse": float(held), "wall_time": elapsed}
        records.append(rec)
        if callback is not None:
            callback(rec)
    return tr, records
