import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from pxqlap.cli import ConfigError, main, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, name, **overrides):
    raw = yaml.safe_load((CONFIGS / f"{name}.yaml").read_text())
    raw.update(overrides)
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run(path, out, *extra):
    return main(["run", str(path), "--out", str(out), "--quiet", *extra])


def read_report(out):
    return json.loads((out / "report.json").read_text())


def test_cooperative_run(tmp_path):
    cfg = write_cfg(tmp_path, "cooperative", n=129)
    assert run(cfg, tmp_path / "o") == 0
    rep = read_report(tmp_path / "o")
    assert rep["passed"] and rep["failed_certificates"] == []
    assert rep["lemma_L3"]["all_pass"]
    assert rep["fixed_point"]["converged"]
    assert rep["constants"]["c"] > 0
    assert (tmp_path / "o" / "fields" / "solution.csv").exists()
    lines = (tmp_path / "o" / "iterations.csv").read_text().splitlines()
    assert lines[0] == "iteration,sup_change" and len(lines) == rep["fixed_point"]["iterations"] + 1
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["runtime_s"] >= 0


def test_competitive_run_with_order_check(tmp_path):
    cfg = write_cfg(tmp_path, "competitive", n=65, order_pairs=5)
    assert run(cfg, tmp_path / "o") == 0
    rep = read_report(tmp_path / "o")
    assert rep["proposition_P1"]["all_pass"]
    assert rep["rho"]["value"] >= 0
    assert rep["order_preservation"]["ordered"] == 5


def test_structure_violation_exit_2(tmp_path, capsys):
    assert run(CONFIGS / "bad_h2.yaml", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "h2" in err
    assert not (tmp_path / "o" / "report.json").exists()


def test_mixed_structure_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, "cooperative", n=65,
                    exponents={"p": 2.5, "q": 2.5, "alpha1": -0.05, "beta1": 0.5, "alpha2": -0.3, "beta2": -0.05})
    assert run(cfg, tmp_path / "o") == 2


def test_failed_certificate_exit_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "cooperative", n=65, **{"lambda": 1.0})
    assert run(cfg, tmp_path / "o") == 1
    rep = read_report(tmp_path / "o")
    assert not rep["passed"] and any(c.startswith("L3_") for c in rep["failed_certificates"])
    assert "certificate failure" in capsys.readouterr().err


@pytest.mark.parametrize("change", [
    {"bogus": 1},
    {"mode": "sideways"},
    {"domain": {"kind": "torus", "bounds": [0, 1]}},
    {"exponents": {"p": "2 + sin(", "q": 2.5, "alpha1": -0.05, "beta1": 0.5, "alpha2": 0.5, "beta2": -0.05}},
    {"n": 2},
])
def test_bad_config_exit_2(tmp_path, change):
    cfg = write_cfg(tmp_path, "cooperative", **change)
    assert run(cfg, tmp_path / "o") == 2


def test_missing_config_exit_2(tmp_path):
    assert run(tmp_path / "nope.yaml", tmp_path / "o") == 2


def test_parse_config_errors():
    with pytest.raises(ConfigError):
        parse_config(["not", "a", "mapping"])


def test_report_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, "competitive", n=65)
    assert run(cfg, tmp_path / "a") == 0
    assert run(cfg, tmp_path / "b") == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, "cooperative", n=65)
    assert run(cfg, tmp_path / "o", "--seed", "9") == 0
    assert read_report(tmp_path / "o")["seed"] == 9


def test_scalar_and_lemma_runs(tmp_path):
    assert run(write_cfg(tmp_path, "scalar_p3", n=257), tmp_path / "s") == 0
    rep = read_report(tmp_path / "s")
    assert rep["passed"]
    assert run(CONFIGS / "lemma_l2.yaml", tmp_path / "l") == 0
    assert 0.01 < read_report(tmp_path / "l")["eps_star"] < 0.4


def test_refine_oracle(tmp_path):
    cfg = write_cfg(tmp_path, "scalar_p3", n=65)
    assert main(["refine", str(cfg), "--out", str(tmp_path / "r"), "--levels", "3", "--quiet"]) == 0
    rep = read_report(tmp_path / "r")["refine"]
    assert rep["reference"] == "closed form" and rep["monotone"] and len(rep["orders"]) == 2


def test_refine_needs_levels(tmp_path):
    cfg = write_cfg(tmp_path, "scalar_p3", n=65)
    assert main(["refine", str(cfg), "--out", str(tmp_path / "r"), "--levels", "1", "--quiet"]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pxqlap.cli", "run", str(CONFIGS / "bad_h2.yaml"),
                          "--out", str(tmp_path / "o"), "--quiet"], capture_output=True, text=True)
    assert res.returncode == 2 and "h2" in res.stderr
