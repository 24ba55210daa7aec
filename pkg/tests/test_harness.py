import csv
import hashlib
import json

import numpy as np
import pytest

from rdm import __version__
from rdm.cli import main
from rdm.data import random_population
from rdm.errors import ConfigError, InvalidInputError
from rdm.harness import PROPERTIES, ExperimentConfig, apply_overrides, run_experiment, verify_all


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _digest(paths):
    h = hashlib.sha256()
    for p in sorted(paths, key=lambda p: p.name):
        h.update(p.read_bytes())
    return h.hexdigest()


SMALL = {"kind": "dynamics", "d": 8, "k": 4, "n_samples": 32, "steps": 20, "alpha": 0.05}


# configuration


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.alpha, cfg.eta, cfg.steps, cfg.top_r) == (0.1, 0.01, 500, 8)
    assert cfg.predictor_mode == "refit"


@pytest.mark.parametrize(
    "doc",
    [
        {"bogus": 1},
        {"kind": "train"},
        {"alpha": 1.5},
        {"alpha": 0.0},
        {"k": 0},
        {"steps": -1},
        {"steps": 2.5},
        {"stop_gradient": "yes"},
        {"filter": "nope"},
        {"predictor_mode": "sometimes"},
        {"d": True},
        {"stride": 0},
    ],
)
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_int_promotes_to_float():
    assert ExperimentConfig.from_dict({"aug_std": 1}).aug_std == 1.0


def test_overrides():
    doc = apply_overrides({"k": 4}, ["k=8", "stop_gradient=false", "filter=pow:-0.5"])
    assert doc == {"k": 8, "stop_gradient": False, "filter": "pow:-0.5"}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["noequals"])


def test_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    cfg = ExperimentConfig.load(path, ["seed=3"])
    assert cfg.seed == 3 and cfg.k == 4
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


# experiments


def test_dynamics_outputs(tmp_path):
    res = run_experiment(dict(SMALL, out_dir=str(tmp_path)))
    assert res.status == 0
    rows = _read_csv(tmp_path / "trajectory.csv")
    assert len(rows) == 21
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["tool_version"] == __version__
    assert summary["final_erank_online"] == pytest.approx(float(rows[-1]["erank_online"]))
    assert ExperimentConfig.from_dict(summary["config"]) == ExperimentConfig.from_dict(
        dict(SMALL, out_dir=str(tmp_path))
    )


def test_dynamics_target_erank_dominates(tmp_path):
    res = run_experiment(dict(SMALL, steps=100, out_dir=str(tmp_path)))
    for row in _read_csv(tmp_path / "trajectory.csv"):
        assert float(row["erank_target"]) >= float(row["erank_online"])
    assert res.status == 0


def test_zero_steps_single_row(tmp_path):
    run_experiment(dict(SMALL, steps=0, out_dir=str(tmp_path)))
    assert len(_read_csv(tmp_path / "trajectory.csv")) == 1


def test_dynamics_with_target_filter(tmp_path):
    res = run_experiment(dict(SMALL, filter="pow:-0.5", out_dir=str(tmp_path)))
    assert res.status == 0


def test_dynamics_rejects_transform_filter(tmp_path):
    res = run_experiment(dict(SMALL, filter="sinkhorn:3:0.05", out_dir=str(tmp_path)))
    assert res.status == 2


def test_dynamics_from_population(tmp_path, rng):
    pop = random_population(4, 3, 4, rng)
    path = tmp_path / "pop.json"
    path.write_text(json.dumps(pop.to_dict()))
    res = run_experiment(dict(SMALL, population=str(path), out_dir=str(tmp_path / "o")))
    assert res.status == 0
    bad = run_experiment(dict(SMALL, population=str(tmp_path / "none.json"), out_dir=str(tmp_path / "o")))
    assert bad.status == 2


def test_filters_high_pass_verdict(tmp_path):
    res = run_experiment({"kind": "filters", "filter": "pow:-0.5", "seed": 3, "k": 16, "n_samples": 128, "out_dir": str(tmp_path)})
    assert res.status == 0
    assert res.summary["verdict"] == "HighPass"
    assert (tmp_path / "filter.csv").exists()


def test_symsimsiam_run(tmp_path):
    res = run_experiment({"kind": "symsimsiam", "d": 8, "k": 4, "n_samples": 16, "steps": 5, "out_dir": str(tmp_path)})
    assert res.status == 0
    rows = _read_csv(tmp_path / "symsimsiam.csv")
    assert max(float(r["identity_residual"]) for r in rows) <= 1e-10


def test_align_run(tmp_path):
    res = run_experiment({"kind": "align", "d": 16, "k": 8, "alpha": 0.05, "steps": 200, "out_dir": str(tmp_path)})
    assert res.status == 0
    assert res.summary["final_alignment"] > 0.99


def test_divergence_exit_code(tmp_path):
    cfg = {"kind": "align", "d": 16, "k": 8, "alpha": 0.99, "steps": 5000, "init_scale": 100.0, "aug_std": 30.0, "out_dir": str(tmp_path)}
    res = run_experiment(cfg)
    assert res.status == 1
    assert "non-finite" in res.message


def test_env_overrides_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("RDM_OUT_DIR", str(tmp_path / "env"))
    run_experiment(dict(SMALL, out_dir=str(tmp_path / "cfg")))
    assert (tmp_path / "env" / "summary.json").exists()
    assert not (tmp_path / "cfg").exists()


def test_reproducible_bytes(tmp_path, monkeypatch):
    digests = []
    for name in ("a", "b"):
        monkeypatch.setenv("RDM_OUT_DIR", str(tmp_path / name))
        res = run_experiment(dict(SMALL, out_dir="same"))
        digests.append(_digest(res.files))
    assert digests[0] == digests[1]


def test_seed_changes_output(tmp_path):
    a = run_experiment(dict(SMALL, seed=1, out_dir=str(tmp_path / "a")))
    b = run_experiment(dict(SMALL, seed=2, out_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a.status == b.status == 0


# property suite


def test_verify_single_instance():
    rep = verify_all(7, 1)
    assert [p.name for p in rep.properties] == list(PROPERTIES)
    assert all(p.instances == 1 for p in rep.properties)
    assert rep.passed


def test_verify_negative_control():
    wiggle = lambda rng: (lambda lam: 1.0 + 0.9 * np.sin(20 * np.log(lam)))
    rep = verify_all(7, 50, filter_hook=wiggle)
    bad = {p.name: p for p in rep.properties}
    assert bad["filtered_erank_gap"].failures > 0
    assert bad["filtered_erank_gap"].worst_margin < 0
    assert not rep.passed
    assert all(p.failures == 0 for n, p in bad.items() if n != "filtered_erank_gap")


def test_verify_rejects_zero_instances():
    with pytest.raises(InvalidInputError):
        verify_all(7, 0)


def test_verify_report_matches_failures():
    rep = verify_all(3, 2).to_dict()
    assert rep["passed"] == all(p["failures"] == 0 for p in rep["properties"])


# CLI


def test_cli_simulate_and_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trajectory.csv").exists()
    assert main(["simulate", "--config", str(cfg), "--set", "bogus=1"]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    cfg.write_text("[1, 2]")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_align(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"d": 16, "k": 8, "alpha": 0.05, "steps": 50}))
    assert main(["align", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["kind"] == "align"


def test_cli_filters(tmp_path, capsys):
    assert main(["filters", "--filter", "pow:-0.5", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert "HighPass" in capsys.readouterr().out
    assert main(["filters", "--filter", "nonsense", "--out", str(tmp_path)]) == 2


def test_cli_verify(tmp_path, capsys):
    assert main(["verify", "--seed", "7", "--instances", "2", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["passed"] and len(rep["properties"]) == len(PROPERTIES)
    assert main(["verify", "--instances", "0", "--out", str(tmp_path)]) == 2


def test_cli_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_verify_default_seed_thousand_instances():
    rep = verify_all(7, 1000)
    assert rep.passed, [(p.name, p.failures) for p in rep.properties if p.failures]
