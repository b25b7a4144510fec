"""Desk-scale experiment sweeps that write plot-ready result tables.

Every run writes ``<name>.csv`` (one row per method, sweep point and seed)
and ``<name>.json`` holding the experiment definition, its hash and the seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import no_grad
from .baselines import (
    evaluate_coeffs, gram_wmmse, mf_coefficients, spd_wmmse, wmmse_power_allocation,
)
from .beamfield import power_vector
from .quadrature import channel_gram, default_grid
from .training import (
    Dataset, TrainConfig, Trainer, from_pairs, make_dataset, project_numpy, train,
    train_value_supervised,
)

FAMILIES = ("mse_vs_time", "se_vs_epoch", "se_vs_M", "se_vs_ntr", "se_vs_snr",
            "se_vs_aperture", "timing")
METHODS = ("gnn", "fnn", "mf", "spd_wmmse", "gram_wmmse", "oracle_mode")
LEARNED = ("gnn", "fnn", "oracle_mode")
COLUMNS = ("family", "method", "sweep", "x", "seed", "metric", "value", "std", "n", "epoch",
           "wall_time", "config_hash", "data_hash")
SWEEP_NAME = {"mse_vs_time": "value_graph", "se_vs_epoch": "schedule", "se_vs_M": "M",
              "se_vs_ntr": "n_train", "se_vs_snr": "snr_db", "se_vs_aperture": "area",
              "timing": "M"}
# families whose learned methods are trained inside the experiment
TRAINS_INLINE = ("mse_vs_time", "se_vs_epoch", "se_vs_ntr")


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class ExperimentSpec:
    """One experiment family over a sweep.

    ``checkpoints`` maps a learned method to a checkpoint path, or to a dict
    from ``str(sweep value)`` to path. ``train`` holds :class:`TrainConfig`
    overrides for families that train inside the run.
    """

    family: str
    sweep: list
    methods: list
    name: str = ""
    K: int = 4
    n_scenes: int = 20
    seed: int = 0
    zeta: float = 1e5
    area: float = 0.25
    wavelength: float = 0.0107
    power_mode: str = "equal"
    m_per_axis: int = 6
    checkpoints: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    repeats: int = 20
    warmups: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not self.methods:
            raise ValueError("method list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if not self.sweep:
            raise ValueError("sweep is empty")
        if self.power_mode not in ("total", "equal"):
            raise ValueError("power_mode must be 'total' or 'equal'")
        if self.n_scenes < 1 or self.repeats < 1 or self.warmups < 0 or self.workers < 1:
            raise ValueError("counts must be positive")
        if self.family in ("se_vs_M", "timing"):
            for M in self.sweep:
                if int(M) < 1 or math.isqrt(int(M)) ** 2 != int(M):
                    raise ValueError(f"M = {M} is not a perfect square")
        if self.family == "mse_vs_time":
            bad = [g for g in self.sweep if g not in ("g1", "g2", "fnn")]
            if bad:
                raise ValueError(f"value graphs must be g1, g2 or fnn, got {bad}")
        if self.family == "se_vs_epoch":
            bad = [s for s in self.sweep if s not in ("phased", "alternative",
                                                      "phased_plus_alternative")]
            if bad:
                raise ValueError(f"unknown schedules {bad}")
        if not self.name:
            self.name = self.family
        TrainConfig.from_dict(self.train_overrides())  # validates keys early

    def train_overrides(self) -> dict:
        d = {"K": self.K, "zeta": self.zeta, "area": self.area, "wavelength": self.wavelength,
             "power_mode": self.power_mode, "seed": self.seed}
        d.update(self.train)
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- helpers --------------------------------------------------------------------------

def train_command(method: str, path) -> str:
    oracle = " --set oracle=true" if method == "oracle_mode" else ""
    arch = " --set arch=fnn" if method == "fnn" else ""
    return f"capabeam train --config <train.json>{arch}{oracle} --checkpoint {path}"


def checkpoint_for(spec: ExperimentSpec, method: str, x) -> Path:
    entry = spec.checkpoints.get(method)
    if isinstance(entry, dict):
        entry = entry.get(str(x))
    if entry is None:
        raise MissingArtifact(
            f"no checkpoint configured for method {method!r} at {SWEEP_NAME[spec.family]}={x}; "
            f"train one with `{train_command(method, '<path>')}` and list it under "
            f"'checkpoints' in the experiment file")
    path = Path(entry)
    if not path.exists():
        raise MissingArtifact(f"checkpoint for method {method!r} not found: {path}; "
                              f"create it with `{train_command(method, path)}`")
    return path


def eval_dataset(spec: ExperimentSpec, zeta=None, area=None) -> Dataset:
    """Evaluation scenes, independent of any training data (seed offset 10007)."""
    return make_dataset(0, 0, spec.n_scenes, spec.K, spec.seed + 10007,
                        zeta=spec.zeta if zeta is None else zeta,
                        area=spec.area if area is None else area, wavelength=spec.wavelength)


def policy_coeffs(trainer: Trainer, data: Dataset) -> np.ndarray:
    """Policy output for arbitrary scenes, in the trainer's scaled units."""
    S = trainer.scaler(data.positions)
    with no_grad():
        return from_pairs(trainer.policy(S).value)


def se_of(q: np.ndarray, B: np.ndarray, zeta: float, mode: str) -> np.ndarray:
    """Per-scene SE; units cancel under projection, so unscaled Q is fine."""
    return np.array([evaluate_coeffs(qi, bi, zeta, mode=mode) if np.any(power_vector(qi, bi) > 0)
                     else 0.0 for qi, bi in zip(q, B)])


def baseline_coeffs(method: str, data: Dataset, q: np.ndarray, m_per_axis: int,
                    mode: str) -> np.ndarray:
    zeta = data.template.zeta
    out = []
    for i, qi in enumerate(q):
        if method == "mf":
            K = len(qi)
            powers = np.full(K, 1.0 / K) if mode == "equal" else \
                wmmse_power_allocation(qi, zeta)
            out.append(mf_coefficients(qi, powers))
        elif method == "gram_wmmse":
            out.append(gram_wmmse(qi, zeta).coeffs)
        elif method == "spd_wmmse":
            out.append(spd_wmmse(data.scene(i), m_per_axis).coeffs)
        else:
            raise ValueError(method)
    return np.stack(out)


def _row(spec, method, x, metric, values, epoch="", wall_time="", data_hash=""):
    values = np.atleast_1d(np.asarray(values, float))
    return {"family": spec.family, "method": method, "sweep": SWEEP_NAME[spec.family], "x": x,
            "seed": spec.seed, "metric": metric, "value": float(values.mean()),
            "std": float(values.std()), "n": len(values), "epoch": epoch,
            "wall_time": wall_time, "config_hash": spec.digest(), "data_hash": data_hash}


def median_time(fn, repeats: int, warmups: int) -> float:
    for _ in range(warmups):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def gnn_inference(trainer: Trainer, positions: np.ndarray) -> np.ndarray:
    """Deployed single-scene pipeline: policy, proj-net powers, projection."""
    S = trainer.scaler(positions[None])
    with no_grad():
        B = trainer.policy(S)
        p_hat = trainer.proj(S, B).value
    return project_numpy(from_pairs(B.value), p_hat, trainer.p_max,
                         trainer.config.power_mode)[0]


# -- families ----------------------------------------------------------------------------

def _se_point(spec: ExperimentSpec, x, data: Dataset, m_per_axis: int, trainers=None):
    q = data.grams()
    zeta = data.template.zeta
    rows = []
    for method in spec.methods:
        if method in LEARNED:
            tr = trainers[method] if trainers else Trainer.load(checkpoint_for(spec, method, x),
                                                                data)
            B = policy_coeffs(tr, data)
        else:
            B = baseline_coeffs(method, data, q, m_per_axis, spec.power_mode)
        rows.append(_row(spec, method, x, "se", se_of(q, B, zeta, spec.power_mode),
                         data_hash=data.digest()))
    return rows


def _learned_config(spec: ExperimentSpec, method: str, **changes) -> TrainConfig:
    d = spec.train_overrides()
    d.update(changes)
    if method == "fnn":
        d["arch"] = "fnn"
    if method == "oracle_mode":
        d["oracle"] = True
    return TrainConfig.from_dict(d)


def run_point(spec: ExperimentSpec, x) -> list[dict]:
    """All rows for one sweep point; deterministic given the experiment definition."""
    fam = spec.family
    if fam == "se_vs_M":
        return _se_point(spec, x, eval_dataset(spec), math.isqrt(int(x)))
    if fam == "se_vs_snr":
        return _se_point(spec, x, eval_dataset(spec, zeta=10 ** (float(x) / 10)),
                         spec.m_per_axis)
    if fam == "se_vs_aperture":
        return _se_point(spec, x, eval_dataset(spec, area=float(x)), spec.m_per_axis)
    if fam == "se_vs_ntr":
        trainers = {m: train(_learned_config(spec, m, n_train=int(x)))
                    for m in spec.methods if m in LEARNED}
        return _se_point(spec, x, eval_dataset(spec), spec.m_per_axis, trainers)
    if fam == "se_vs_epoch":
        rows = []
        for m in spec.methods:
            if m not in LEARNED:
                continue
            tr = Trainer(_learned_config(spec, m, schedule=x))
            tr.fit()
            for r in tr.history:
                if np.isfinite(r.val_se):
                    rows.append(_row(spec, m, x, "val_se", r.val_se, epoch=r.epoch,
                                     wall_time=r.wall_time, data_hash=tr.data.digest()))
        return rows
    if fam == "mse_vs_time":
        method = "fnn" if x == "fnn" else "gnn"
        if method not in spec.methods:
            return []
        cfg = _learned_config(spec, method, arch=x)
        tr, records = train_value_supervised(cfg)
        return [_row(spec, method, x, "heldout_rel_mse", r["heldout_rel_mse"], epoch=r["epoch"],
                     wall_time=r["wall_time"], data_hash=tr.data.digest()) for r in records]
    if fam == "timing":
        return timing_point(spec, int(x))
    raise ValueError(fam)


def timing_point(spec: ExperimentSpec, M: int) -> list[dict]:
    """Median single-scene wall time per method; spd_wmmse runs at ``M`` patches."""
    data = eval_dataset(spec)
    scene = data.scene(0)
    rows = []
    for method in spec.methods:
        if method in LEARNED:
            tr = Trainer.load(checkpoint_for(spec, method, M), data)
            fn = lambda: gnn_inference(tr, scene.users)  # noqa: E731
        elif method == "spd_wmmse":
            fn = lambda: spd_wmmse(scene, math.isqrt(M))  # noqa: E731
        elif method == "gram_wmmse":
            grid = default_grid(scene.aperture)
            fn = lambda: gram_wmmse(channel_gram(scene, grid), scene.zeta)  # noqa: E731
        else:
            grid = default_grid(scene.aperture)
            fn = lambda: mf_coefficients(channel_gram(scene, grid),  # noqa: E731
                                         np.full(scene.K, 1.0 / scene.K))
        t = median_time(fn, spec.repeats, spec.warmups)
        rows.append(_row(spec, method, M, "wall_time", t, wall_time=t,
                         data_hash=data.digest()))
    return rows


def run_experiment(spec: ExperimentSpec, out_dir) -> Path:
    """Run every sweep point and write the CSV table plus its JSON sidecar.

    Returns the CSV path. Learned-method checkpoints are checked before any
    work starts so a missing file fails fast.
    """
    if spec.family not in TRAINS_INLINE:
        for method in spec.methods:
            if method in LEARNED:
                for x in spec.sweep:
                    checkpoint_for(spec, method, x)
    t0 = time.perf_counter()
    if spec.workers > 1 and len(spec.sweep) > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            parts = list(pool.map(run_point, [spec] * len(spec.sweep), spec.sweep))
    else:
        parts = [run_point(spec, x) for x in spec.sweep]
    rows = [r for part in parts for r in part]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{spec.name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    meta = {"experiment": spec.to_dict(), "config_hash": spec.digest(), "seed": spec.seed,
            "columns": list(COLUMNS), "rows": len(rows), "version": __version__,
            "elapsed": time.perf_counter() - t0}
    (out_dir / f"{spec.name}.json").write_text(json.dumps(meta, indent=2, default=str))
    return csv_path


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
