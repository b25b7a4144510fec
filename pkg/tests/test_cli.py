import hashlib
import json

import numpy as np
import pytest

from capabeam.cli import main
from capabeam.physics import channel_matrix, default_scenario
from capabeam.quadrature import pairs_to_complex

SMALL = ["--set", "n_train=16", "--set", "n_val=4", "--set", "n_test=4", "--set", "seed=7"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_gen_data_deterministic(tmp_path):
    assert main(["gen-data", *SMALL, "--out", str(tmp_path / "a.npz")]) == 0
    assert main(["gen-data", *SMALL, "--out", str(tmp_path / "b.npz")]) == 0
    assert sha(tmp_path / "a.npz") == sha(tmp_path / "b.npz")


def test_runs_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CAPA_RUNS_DIR", str(tmp_path))
    assert main(["gen-data", *SMALL, "--out", "d.npz"]) == 0
    assert (tmp_path / "d.npz").exists()


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["gen-data", "--out", "x.npz", "--bogus"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err
    assert main(["gen-data", "--set", "schedule=cyclic", "--out", "x.npz"]) == 2
    assert main(["gen-data", "--set", "nokey", "--out", "x.npz"]) == 2


def test_eval_missing_checkpoint(tmp_path, capsys):
    missing = tmp_path / "untrained.npz"
    assert main(["eval", "--checkpoint", str(missing)]) == 3
    assert str(missing) in capsys.readouterr().err


def test_missing_config_and_data(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "c.json"), "--out", "x.npz"]) == 3
    assert main(["baseline", "--method", "mf", "--data", str(tmp_path / "d.npz")]) == 3


def test_train_eval_roundtrip(tmp_path):
    cfg = {"n_train": 16, "n_val": 4, "n_test": 4, "n_epochs": 2, "batch_size": 8,
           "pretrain_samples": 16, "pretrain_epochs": 1, "label_nodes": 16}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    run = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "c.json"), "--run-dir", str(run)]) == 0
    for name in ("config.json", "metrics.csv", "checkpoint.npz", "report.json"):
        assert (run / name).exists()
    lines = (run / "metrics.csv").read_text().strip().splitlines()
    assert lines[0].startswith("epoch,policy_loss") and len(lines) == 3
    out = tmp_path / "eval.json"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.npz"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    train_rep = json.loads((run / "report.json").read_text())
    assert rep["mean_se"] == pytest.approx(train_rep["mean_se"], abs=1e-9)


def test_baseline_verb(tmp_path):
    out = tmp_path / "b.json"
    assert main(["baseline", "--method", "mf", *SMALL, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n"] == 4 and rep["mean_se"] > 0


def test_experiment_verb(tmp_path):
    (tmp_path / "e.json").write_text(json.dumps(
        {"family": "se_vs_M", "sweep": [4], "methods": ["mf"], "n_scenes": 2}))
    assert main(["experiment", "--spec", str(tmp_path / "e.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "se_vs_M.csv").exists() and (tmp_path / "se_vs_M.json").exists()
    (tmp_path / "bad.json").write_text(json.dumps(
        {"family": "se_vs_M", "sweep": [4], "methods": []}))
    assert main(["experiment", "--spec", str(tmp_path / "bad.json")]) == 2


def test_export_beam_mf_single_user(tmp_path):
    scene = default_scenario(users=np.array([[0.3, -0.2, 30.0]]))
    scene.save(tmp_path / "s.json")
    pts = [[0.1, 0.05, 0.0], [-0.2, 0.2, 0.0], [0.0, 0.0, 0.0], [0.24, -0.24, 0.0]]
    (tmp_path / "p.json").write_text(json.dumps(pts))
    out = tmp_path / "beam.json"
    assert main(["export-beam", "--scene", str(tmp_path / "s.json"), "--method", "mf",
                 "--points", str(tmp_path / "p.json"), "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    field = pairs_to_complex(d["fields"])[0]
    h = channel_matrix(scene.users, np.array(pts), scene.aperture, scene.constants)[0]
    ratio = field / np.conj(h)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12, atol=0)


def test_export_beam_default_grid_and_gnn_needs_checkpoint(tmp_path):
    out = tmp_path / "beam.json"
    assert main(["export-beam", *SMALL, "--method", "mf", "--grid", "4", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert len(d["points"]) == 16 and np.shape(d["fields"])[:2] == (4, 16)
    with pytest.raises(SystemExit) as e:
        main(["export-beam", *SMALL])
    assert e.value.code == 2
    assert main(["export-beam", *SMALL, "--checkpoint", str(tmp_path / "none.npz")]) == 3
