import hashlib
import json
import os
import subprocess
import sys

import pytest

from cornerwave.cli import EXIT_NUMERIC, EXIT_OK, EXIT_SCHEMA, main

SQUARE = {"type": "polygon", "vertices": [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]}
DISK = {"type": "disk", "radius": 0.5}
CONFIGS = {
    "verify-cgo": {"s_grid": {"min_exp": 2, "max_exp": 4, "n": 5}, "alphas": [0.5], "closed_form_s": [10.0]},
    "fit-herglotz": {"k": 2.0, "P": 4, "domain": SQUARE, "mesh_h": 0.2},
    "eig": {"medium": {"domain": SQUARE, "q": 2.0, "eta": 1.0}, "mesh_h": 0.25,
            "window": {"k_min": 0.5, "k_max": 30.0}, "save_pairs": 1},
    "forward": {"medium": {"domain": DISK, "q": 2.0, "eta": [0.5, 0.2]}, "incident": {"k": 1.0}, "mesh_h": 0.2},
    "farfield": {"medium": {"domain": DISK, "q": 2.0, "eta": 0.5}, "incident": {"k": 1.0, "angle": 0.4},
                 "n_samples": 32},
    "distinguish": {"medium1": {"domain": SQUARE, "q": 2.0, "eta": 0.5},
                    "medium2": {"domain": SQUARE, "q": 2.0, "eta": 0.5},
                    "incident": {"k": 2.0}, "R": 1.2, "mesh_h": 0.2},
    "recover-eta": {"domain": SQUARE, "q": 2.0, "incident": {"k": 2.0, "angle": 0.3}, "eta_true": 0.5,
                    "search": [0.0, 1.0], "R": 1.2, "mesh_h": 0.15, "curve_points": 5},
    "dimred-verify": {"n_points": 4},
}
OUTPUTS = {
    "verify-cgo": ["summary.json", "zeta.csv", "tail.csv"],
    "fit-herglotz": ["kernel.json", "fit_report.json"],
    "eig": ["eigenvalues.json"],
    "forward": ["farfield.csv", "summary.json"],
    "farfield": ["farfield.csv"],
    "distinguish": ["report.json"],
    "recover-eta": ["report.json", "misfit.csv", "misfit.svg"],
    "dimred-verify": ["checks.json"],
}


def _run(tmp_path, command, cfg, out="out", extra=()):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


@pytest.mark.parametrize("command", sorted(CONFIGS))
def test_command_runs_and_writes_manifest(tmp_path, command):
    assert _run(tmp_path, command, CONFIGS[command]) == EXIT_OK
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    hashes = {a["path"]: a["sha256"] for a in manifest["artifacts"]}
    assert manifest["command"] == command
    for name in OUTPUTS[command]:
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == hashes[name]


def test_reruns_are_byte_identical(tmp_path):
    cfg = CONFIGS["recover-eta"]
    assert _run(tmp_path, "recover-eta", cfg, "a", ["--seed", "5"]) == EXIT_OK
    assert _run(tmp_path, "recover-eta", cfg, "b", ["--seed", "5"]) == EXIT_OK
    for name in ("manifest.json", "report.json", "misfit.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_recover_eta_report(tmp_path):
    assert _run(tmp_path, "recover-eta", CONFIGS["recover-eta"]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert abs(rep["eta_hat"] - 0.5) < 1e-3
    assert {"distance", "floor", "verdict", "eta_hat", "misfit_curve"} <= set(rep)


def test_identical_media_not_distinguished(tmp_path):
    assert _run(tmp_path, "distinguish", CONFIGS["distinguish"]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["distance"] == 0.0 and rep["verdict"] is False


def test_defaults_without_config(tmp_path):
    assert main(["dimred-verify", "--out", str(tmp_path / "d")]) == EXIT_OK
    checks = json.loads((tmp_path / "d" / "checks.json").read_text())
    assert all({"name", "value", "bracket_lo", "bracket_hi", "pass"} <= set(c) for c in checks)
    assert main(["eig", "--out", str(tmp_path / "e")]) == EXIT_SCHEMA


@pytest.mark.parametrize("cfg", [{"k": -1.0, "P": 2, "domain": SQUARE}, {"k": 1.0, "P": 2},
                                 {"k": 1.0, "P": 2, "domain": SQUARE, "bogus": 1}])
def test_schema_errors_exit_2(tmp_path, cfg):
    assert _run(tmp_path, "fit-herglotz", cfg) == EXIT_SCHEMA


def test_malformed_json_exits_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["eig", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_SCHEMA


def test_numerical_failure_exits_3_with_diagnostic(tmp_path):
    cfg = dict(CONFIGS["eig"], window={"k_min": 500.0, "k_max": 501.0})
    assert _run(tmp_path, "corner-profile", cfg) == EXIT_NUMERIC
    diag = json.loads((tmp_path / "out" / "diagnostic.json").read_text())
    assert diag["command"] == "corner-profile" and "window" in diag["message"]
    assert (tmp_path / "out" / "manifest.json").exists()


def test_module_entry_point_and_log_level(tmp_path):
    env = dict(os.environ, CWL_LOG="INFO")
    r = subprocess.run([sys.executable, "-m", "cornerwave", "dimred-verify", "--out", str(tmp_path / "m")],
                       env=env, capture_output=True, text=True, timeout=300)
    assert r.returncode == EXIT_OK
    assert "running dimred-verify" in r.stderr
