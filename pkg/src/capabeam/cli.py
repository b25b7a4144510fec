"""``capabeam`` command line: data generation, training, evaluation and sweeps.

Exit codes: 0 success, 2 usage error, 3 missing artifact, 4 numeric failure.
Relative output paths are placed under ``$CAPA_RUNS_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineDomainError, mf_coefficients
from .beamfield import (
    DegenerateBeamError, power_vector, project_equal_power, project_power, synthesize_fields,
)
from .experiments import (
    ExperimentSpec, MissingArtifact, baseline_coeffs, policy_coeffs, run_experiment, se_of,
)
from .physics import ChannelDomainError, Scenario
from .quadrature import channel_gram, complex_to_pairs, default_grid, gauss_legendre_grid
from .training import (
    Dataset, TrainConfig, Trainer, TrainingDivergence, evaluate_policy, parameter_counts,
)

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
RUNS_ENV = "CAPA_RUNS_DIR"


class UsageError(ValueError):
    pass


def runs_path(path) -> Path:
    """Resolve an output path against the run-directory root."""
    path = Path(path)
    root = os.environ.get(RUNS_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides, cls=TrainConfig):
    """Read a JSON config (optional) and apply ``key=value`` overrides."""
    d = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingArtifact(f"config file not found: {p}")
        d = json.loads(p.read_text())
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        d[key.strip()] = _parse_value(value)
    d = {k: tuple(v) if isinstance(v, list) and k != "sweep" and k != "methods" else v
         for k, v in d.items()}
    try:
        return cls.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def load_dataset(path, config: TrainConfig) -> Dataset:
    if path is None:
        return config.dataset()
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"dataset file not found: {p}; create it with `capabeam gen-data`")
    return Dataset.load(p)


def load_trainer(path, data=None) -> Trainer:
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"checkpoint not found: {p}; create it with "
                              f"`capabeam train --config <train.json> --checkpoint {p}`")
    return Trainer.load(p, data)


def _emit(obj, out):
    text = json.dumps(obj, indent=2, default=float)
    if out is None:
        print(text)
    else:
        path = runs_path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        print(path)


# -- verbs ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = load_config(args.config, args.set)
    data = cfg.dataset()
    out = runs_path(args.out)
    data.save(out)
    print(f"{out} scenes={len(data)} digest={data.digest()}")


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    data = load_dataset(args.data, cfg)
    run_dir = runs_path(args.run_dir or f"train-{cfg.digest()}")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    metrics = open(run_dir / "metrics.csv", "w", newline="")
    writer = csv.writer(metrics)
    writer.writerow(["epoch", "policy_loss", "proj_mse", "value_mse", "val_se", "wall_time"])
    trainer = Trainer(cfg, data)

    def log_epoch(rec):
        writer.writerow([rec.epoch, rec.policy_loss, rec.proj_mse, rec.value_mse, rec.val_se,
                         rec.wall_time])
        metrics.flush()

    try:
        trainer.fit(callback=log_epoch)
    finally:
        metrics.close()
    trainer.load_best()
    ckpt = runs_path(args.checkpoint) if args.checkpoint else run_dir / "checkpoint.npz"
    trainer.save(ckpt)
    report = evaluate_policy(trainer, "test").to_dict()
    report.pop("per_scene")
    report.update(best_epoch=trainer.best["epoch"], parameters=parameter_counts(trainer),
                  checkpoint=str(ckpt))
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    print(json.dumps(report, default=float))


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise MissingArtifact(f"checkpoint not found: {ckpt}; create it with "
                              f"`capabeam train --config <train.json> --checkpoint {ckpt}`")
    data = None
    if args.data is not None:
        p = Path(args.data)
        if not p.exists():
            raise MissingArtifact(f"dataset file not found: {p}")
        data = Dataset.load(p)
    trainer = Trainer.load(ckpt, data)
    if args.split not in trainer.data.splits:
        raise UsageError(f"dataset has no split {args.split!r}")
    report = evaluate_policy(trainer, args.split).to_dict()
    if not args.per_scene:
        report.pop("per_scene")
    _emit(report, args.out)


def cmd_baseline(args):
    cfg = load_config(args.config, args.set)
    data = load_dataset(args.data, cfg)
    if args.split not in data.splits:
        raise UsageError(f"dataset has no split {args.split!r}")
    sub = data.subset(args.split)
    if args.n is not None:
        sub = Dataset(sub.positions[:args.n], sub.template, sub.seed, {args.split: (0, args.n)})
    q = sub.grams()
    B = baseline_coeffs(args.method, sub, q, args.m_per_axis, args.power_mode)
    se = se_of(q, B, sub.template.zeta, args.power_mode)
    _emit({"method": args.method, "split": args.split, "n": len(se), "mean_se": se.mean(),
           "std_se": se.std(), "power_mode": args.power_mode,
           "m_per_axis": args.m_per_axis if args.method == "spd_wmmse" else None}, args.out)


def cmd_experiment(args):
    spec = load_config(args.spec, args.set, cls=ExperimentSpec)
    path = run_experiment(spec, runs_path(args.out))
    print(path)


def beam_points(scene: Scenario, n: int) -> np.ndarray:
    """``n x n`` Gauss-Legendre nodes on the aperture, as world coordinates."""
    return gauss_legendre_grid(scene.aperture, n, n).nodes


def cmd_export_beam(args):
    if args.scene is not None:
        p = Path(args.scene)
        if not p.exists():
            raise MissingArtifact(f"scene file not found: {p}")
        scene = Scenario.load(p)
    else:
        cfg = load_config(args.config, args.set)
        scene = load_dataset(args.data, cfg).scene(args.index)
    if args.points is not None:
        p = Path(args.points)
        if not p.exists():
            raise MissingArtifact(f"points file not found: {p}")
        points = np.asarray(json.loads(p.read_text()), float).reshape(-1, 3)
    else:
        points = beam_points(scene, args.grid)
    gram = channel_gram(scene, default_grid(scene.aperture))
    if args.method == "mf":
        B = mf_coefficients(gram, np.full(scene.K, scene.p_max / scene.K))
    else:
        trainer = load_trainer(args.checkpoint)
        B = policy_coeffs(trainer, _single(scene))[0]
        p = power_vector(gram, B)
        B = project_equal_power(B, p, scene.p_max) if trainer.config.power_mode == "equal" \
            else project_power(B, p, scene.p_max)
    fields = synthesize_fields(scene, B, points)
    _emit({"scene_hash": scene.digest(), "method": args.method, "coeffs": complex_to_pairs(B),
           "points": points.tolist(), "fields": complex_to_pairs(fields)}, args.out)


def _single(scene: Scenario) -> Dataset:
    return Dataset(scene.users[None].copy(), scene, 0, {"test": (0, 1)})


# -- parser ---------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capabeam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON training config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")

    p = sub.add_parser("gen-data", help="generate a scenario dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the three networks")
    common(p)
    p.add_argument("--data", help="dataset from gen-data (default: generated from config)")
    p.add_argument("--run-dir")
    p.add_argument("--checkpoint", help="checkpoint path (default: <run-dir>/checkpoint.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint by exact quadrature")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--per-scene", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate a classical baseline")
    common(p)
    p.add_argument("--method", required=True, choices=("mf", "spd_wmmse", "gram_wmmse"))
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int)
    p.add_argument("--m-per-axis", type=int, default=6)
    p.add_argument("--power-mode", choices=("equal", "total"), default="equal")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("experiment", help="run an experiment sweep")
    p.add_argument("--spec", required=True, help="JSON experiment definition")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-beam", help="sample beamforming fields for plotting")
    common(p)
    p.add_argument("--scene", help="scene JSON (alternative to --data/--index)")
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", choices=("mf", "gnn"), default="gnn")
    p.add_argument("--checkpoint")
    p.add_argument("--grid", type=int, default=16, help="nodes per axis on the aperture")
    p.add_argument("--points", help="JSON list of [x, y, z] sample points")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_beam)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "verb", None) == "export-beam" and args.method == "gnn" \
            and not args.checkpoint:
        parser.error("export-beam --method gnn needs --checkpoint")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"capabeam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"capabeam: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDivergence, BaselineDomainError, DegenerateBeamError, ChannelDomainError,
            FloatingPointError, ArithmeticError) as exc:
        print(f"capabeam: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
