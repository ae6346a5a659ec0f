from __future__ import annotations

import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from components.cli import run_command

FAST = ["--nz", "48", "--nt", "48", "--modes", "4"]


def _run(tmp_path, *argv: str) -> int:
    return run_command([*argv, *FAST, "--out", str(tmp_path), "--quiet"])


def _read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def test_modes_writes_tables_and_manifest(tmp_path):
    assert _run(tmp_path, "modes") == 0
    eig = _read_csv(tmp_path / "eigenvalues.csv")
    assert list(eig.columns) == ["i", "s", "eta", "quantum"]
    assert len(eig) == 4
    funcs = _read_csv(tmp_path / "eigenfunctions.csv")
    assert list(funcs.columns) == ["t", "phi_1", "phi_2", "phi_3", "phi_4"]
    text = (tmp_path / "eigenvalues.csv").read_text()
    assert text.startswith("# L = 10\n")

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "modes"
    assert manifest["config"]["nz"] == 48
    names = {f["name"]: f["sha256"] for f in manifest["files"]}
    assert set(names) == {"eigenvalues.csv", "eigenfunctions.csv"}
    for name, digest in names.items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_output_is_identical_across_worker_counts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_command(["modes", *FAST, "--out", str(a), "--workers", "1", "--quiet"]) == 0
    assert run_command(["modes", *FAST, "--out", str(b), "--workers", "3", "--quiet"]) == 0
    for name in ("eigenvalues.csv", "eigenfunctions.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unequal_durations_write_retrieval_modes(tmp_path):
    assert _run(tmp_path, "modes", "--write-duration", "4", "--read-duration", "8") == 0
    retrieval = _read_csv(tmp_path / "retrieval_modes.csv")
    assert retrieval["t"].iloc[-1] == pytest.approx(8.0)
    assert list(retrieval.columns) == ["t", "chi_1", "chi_2", "chi_3", "chi_4"]
    eig = _read_csv(tmp_path / "eigenvalues.csv")
    assert eig["scaled_deviation"].iloc[0] > 0.5
    assert "# read_modes = exact" in (tmp_path / "retrieval_modes.csv").read_text()


def test_scaled_read_modes_refused_when_inaccurate(tmp_path):
    assert _run(tmp_path, "modes", "--write-duration", "4", "--read-duration", "8", "--scaled-read") == 4


def test_motionless_overlap_is_identity(tmp_path):
    assert _run(tmp_path, "overlap", "--delta-l", "0") == 0
    q = _read_csv(tmp_path / "overlap.csv")
    mat = q[[f"Q_{j}" for j in range(1, 5)]].to_numpy()
    assert mat[:2, :2] == pytest.approx(np.eye(2), abs=1e-5)
    assert q["asymmetry"].iloc[:2].max() <= 1e-5


def test_overlap_records_asymmetry(tmp_path):
    assert _run(tmp_path, "overlap", "--delta-l", "2") == 0
    text = (tmp_path / "overlap.csv").read_text()
    assert "# asymmetry = " in text
    assert "# full_asymmetry = " in text
    assert "asymmetry" in _read_csv(tmp_path / "overlap.csv").columns


def test_cycle_with_mixing_writes_report(tmp_path):
    assert _run(tmp_path, "cycle", "--mixing", "--input-mode", "2") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["storage"] == "full_mixing(excitation)"
    eta = np.array(report["efficiencies"])
    assert np.all((eta >= 0.0) & (eta <= 1.0 + 1e-6))
    assert list(report["input_projections"]) == ["2"]
    assert _read_csv(tmp_path / "output_profiles.csv").shape[1] == 5


def test_store_writes_scaling_map(tmp_path):
    assert _run(tmp_path, "store", "--delta-l", "2", "--transform", "density") == 0
    smap = _read_csv(tmp_path / "scaling_map.csv")
    assert smap["f"].iloc[-1] == pytest.approx(10.0)
    assert "psi0_sq_1" in _read_csv(tmp_path / "stored_responses.csv").columns


def test_json_format(tmp_path):
    assert _run(tmp_path, "response", "--format", "json") == 0
    payload = json.loads((tmp_path / "responses.json").read_text())
    assert payload["columns"][0] == "z"
    assert payload["parameters"]["n_z"] == 48


def test_optimize(tmp_path):
    assert _run(tmp_path, "optimize", "--delta-l", "2") == 0
    eig = _read_csv(tmp_path / "optimized_eigenvalues.csv")
    assert "eta_motionless" in eig.columns


def test_optimize_needs_linear_storage(tmp_path):
    assert _run(tmp_path, "optimize", "--mixing") == 3
    assert _run(tmp_path, "optimize", "--mixing", "--mix-norm", "amplitude") == 0


def test_sweep_marks_out_of_model_rows(tmp_path):
    assert _run(tmp_path, "sweep", "--durations", "2", "11") == 0
    sweep = _read_csv(tmp_path / "sweep.csv")
    assert list(sweep["out_of_model"]) == [False, True]
    assert [c for c in sweep.columns if c.startswith("s_")] == ["s_1", "s_2", "s_3", "s_4", "s_5"]


def test_check_passes_for_caesium(tmp_path):
    assert _run(tmp_path, "check") == 0
    row = _read_csv(tmp_path / "classicality.csv").iloc[0]
    assert bool(row["passed"])
    assert row["ratio"] > 1e4


def test_check_fails_for_degenerate_gas(tmp_path):
    assert _run(tmp_path, "check", "--temperature", "1e-9", "--density", "1e21") == 3


def test_selftest_reports_every_check(tmp_path):
    code = _run(tmp_path, "selftest")
    result = json.loads((tmp_path / "selftest.json").read_text())
    checks = {c["name"]: c for c in result["checks"]}
    assert code == (0 if result["passed"] else 4)
    for name in ("mode_orthonormality", "overlap_identity", "gaussian_blur_oracle[hermite]",
                 "gaussian_blur_oracle[segment]", "scaled_mode_identity"):
        assert checks[name]["passed"], name


def test_usage_error_exit_code(tmp_path):
    assert run_command(["modes", "--no-such-flag"]) == 2
    assert run_command(["transmogrify"]) == 2
    assert run_command(["overlap", "--mixing", "--delta-l", "2"]) == 2


def test_validity_guard_exit_code(tmp_path):
    assert _run(tmp_path, "modes", "--length", "5") == 3
    assert _run(tmp_path, "modes", "--length", "5", "--allow-out-of-model") == 0


def test_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lenght = 3\n")
    assert _run(tmp_path, "modes", "--config", str(cfg)) == 2


def test_config_file_is_used(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("modes = 3\n")
    assert run_command(["modes", "--config", str(cfg), "--nz", "48", "--nt", "48",
                        "--out", str(tmp_path), "--quiet"]) == 0
    assert len(_read_csv(tmp_path / "eigenvalues.csv")) == 3
