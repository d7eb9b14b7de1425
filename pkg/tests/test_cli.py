import csv
import json

import pytest
import yaml

from peglue.cli import main


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main(list(argv) + ["--out", str(out)])
    status = {}
    if (out / "status.json").exists():
        status = json.loads((out / "status.json").read_text())
    return code, out, status


def test_indicial_command(tmp_path):
    code, out, status = run(tmp_path, "indicial", "--n", "3")
    assert code == 0
    assert status["exit_code"] == 0
    rows = list(csv.DictReader(open(out / "indicial.csv")))
    assert rows[0]["label"] == "zeta1"
    assert float(rows[0]["zeta_plus"]) == pytest.approx(4.372281323269014, abs=1e-12)
    assert rows[1]["zeta_plus"].startswith("4.0000")


def test_indicial_rejects_n_one(tmp_path):
    code, _, status = run(tmp_path, "indicial", "--n", "1")
    assert code == 2
    assert status["exit_code"] == 2


def test_indicial_window_column(tmp_path):
    _, out, _ = run(tmp_path, "indicial", "--n", "2")
    rows = list(csv.DictReader(open(out / "indicial.csv")))
    assert rows[0]["window"] == "(0,2)"


def test_residual_flat_pair(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "chart1": "hyperbolic_half_space",
        "chart2": "hyperbolic_half_space",
        "eps": [0.2, 0.1, 0.05],
        "grid": [10, 10, 10],
    }))
    code, out, status = run(tmp_path, "residual", "--config", str(cfg))
    assert code == 0
    assert "slope n/a" in status["summary"]
    rows = list(csv.DictReader(open(out / "residual_study.csv")))
    assert len(rows) == 3
    assert all(float(r["sup_residual"]) < 1e-8 for r in rows)


def test_residual_missing_manifest(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"chart1": str(tmp_path / "nope.yaml")}))
    code, _, status = run(tmp_path, "residual", "--config", str(cfg))
    assert code == 3


def test_missing_config_file(tmp_path):
    code = main(["residual", "--config", str(tmp_path / "absent.yaml")])
    assert code == 3


def test_solve_flat_pair(tmp_path):
    code, out, status = run(tmp_path, "solve", "--n", "2", "--eps", "0.1",
                            "--grid", "10,10,10")
    # defaults are the ball pair; override via config for the flat one
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "chart1": "hyperbolic_half_space",
        "chart2": "hyperbolic_half_space",
        "grid": [10, 10, 10],
        "eps": [0.1],
    }))
    code, out, status = run(tmp_path, "solve", "--config", str(cfg))
    assert code == 0
    assert (out / "solve_report.txt").exists()
    assert (out / "correction.csv").exists()
    rows = list(csv.DictReader(open(out / "residual_history.csv")))
    assert float(rows[0]["weighted_residual"]) < 1e-8


def test_solve_eps_too_large_fails_with_report(tmp_path):
    code, out, status = run(tmp_path, "solve", "--n", "2", "--eps", "0.45",
                            "--grid", "10,10,10")
    assert code == 4
    assert status["exit_code"] == 4


def test_boundary_sphere_pair(tmp_path):
    code, out, status = run(tmp_path, "boundary", "--n", "2", "--eps", "0.1",
                            "--grid", "32,32")
    assert code == 0
    rows = list(csv.DictReader(open(out / "boundary_scalar_curvature.csv")))
    assert {"y0", "y1", "scalar_curvature", "valid"} <= set(rows[0])
    valid_r = [float(r["scalar_curvature"]) for r in rows if r["valid"] == "1"]
    assert min(valid_r) > 0


def test_boundary_flat_pair_near_zero(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "chart1": "hyperbolic_half_space",
        "chart2": "hyperbolic_half_space",
        "grid": [24, 24],
        "eps": [0.1],
    }))
    code, out, status = run(tmp_path, "boundary", "--config", str(cfg))
    assert code == 0
    rows = list(csv.DictReader(open(out / "boundary_scalar_curvature.csv")))
    assert max(abs(float(r["scalar_curvature"])) for r in rows) < 1e-8


def test_normform_command(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "metric": {
            "model": "perturbed",
            "params": {"amplitude": 0.05},
            "grid": {"n": 2, "counts": [16, 10, 10], "x_range": [0.05, 0.5],
                     "y_extent": 0.4},
        },
    }))
    code, out, status = run(tmp_path, "normform", "--config", str(cfg))
    assert code == 0
    assert (out / "normal_form_metric.csv").exists()
    assert (out / "normal_form_xhat.csv").exists()


def test_normform_needs_metric(tmp_path):
    code, _, status = run(tmp_path, "normform")
    assert code == 3


def test_linprobe_command(tmp_path):
    code, out, status = run(tmp_path, "linprobe", "--n", "2",
                            "--grid", "10,10,10", "--mu", "0.5")
    assert code == 0
    rows = list(csv.DictReader(open(out / "kernel_probe.csv")))
    assert float(rows[0]["sigma_min"]) > 1e-3
    assert rows[0]["flagged"] == "0"


def test_outputs_are_deterministic(tmp_path):
    _, out1, _ = run(tmp_path / "a", "indicial", "--n", "3")
    _, out2, _ = run(tmp_path / "b", "indicial", "--n", "3")
    assert (out1 / "indicial.csv").read_bytes() == (out2 / "indicial.csv").read_bytes()


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"n": 2}))
    code, out, status = run(tmp_path, "indicial", "--config", str(cfg), "--n", "4")
    assert code == 0
    rows = list(csv.DictReader(open(out / "indicial.csv")))
    assert rows[0]["window"] == "(0,4)"
