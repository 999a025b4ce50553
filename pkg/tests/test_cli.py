import json
import math
import os


from homogbc.cli import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK,
                         EXIT_VERDICT_FALSE, main)


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, command, cfg):
    out = tmp_path / "out"
    code = main([command, _write(tmp_path, "cfg.json", cfg),
                 "--output-dir", str(out)])
    return code, out


def test_equidist_roundtrip(tmp_path):
    phi = (1 + math.sqrt(5)) / 2
    code, out = _run(tmp_path, "equidist", {
        "nu": [1.0, phi], "delta": 0.1, "R_list": [100, 1000],
    })
    assert code == EXIT_OK
    lines = (out / "equidist.csv").read_text().strip().splitlines()
    assert lines[0] == "R,A,N,ratio"
    assert len(lines) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "equidist"
    assert "homogbc" in manifest["versions"]
    assert manifest["outputs"] == ["equidist.csv", "equidist.json"]


def test_solve_writes_grid(tmp_path):
    code, out = _run(tmp_path, "solve", {
        "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 0.9},
        "operator": {"kind": "laplacian"},
        "g": "cos(2*pi*y1)", "period": [1.0, 1.0],
        "epsilon": 0.125, "h": 1 / 64,
    })
    assert code == EXIT_OK
    assert (out / "solution.grid").exists()
    rec = json.loads((out / "solve.json").read_text())
    assert rec["record"]["converged"]


def test_audit_exit_codes(tmp_path):
    code, _ = _run(tmp_path, "audit", {
        "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0}})
    assert code == EXIT_OK
    code, _ = _run(tmp_path, "audit", {
        "domain": {"kind": "half_disk_flat_bottom",
                   "center": [0.0, 1.0], "radius": 1.0}})
    assert code == EXIT_VERDICT_FALSE


def test_barriers_command(tmp_path):
    code, out = _run(tmp_path, "barriers", {
        "n": 3, "lam": 1.0, "Lam": 1.5,
        "kinds": ["radial_interior", "quad_strip"], "n_samples": 200,
    })
    assert code == EXIT_OK
    reports = json.loads((out / "barriers.json").read_text())
    assert reports["radial_interior"]["is_supersolution"]


def test_validate_command(tmp_path):
    code, _ = _run(tmp_path, "validate", {
        "operator": {"kind": "pucci_plus", "lam": 1.0, "Lam": 2.0}})
    assert code == EXIT_OK


def test_missing_field_is_config_error(tmp_path):
    code, _ = _run(tmp_path, "solve", {
        "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 0.9}})
    assert code == EXIT_CONFIG


def test_bad_json_is_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["solve", str(path)]) == EXIT_CONFIG


def test_missing_file_is_config_error(tmp_path):
    assert main(["solve", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_unresolved_grid_is_config_error(tmp_path):
    code, _ = _run(tmp_path, "solve", {
        "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 0.9},
        "operator": {"kind": "laplacian"},
        "g": "cos(2*pi*y1)", "period": [1.0, 1.0],
        "epsilon": 1 / 16, "h": 1 / 32,
    })
    assert code == EXIT_CONFIG


def test_numerical_error_exit(tmp_path):
    # order-1 stencil cannot certify a strong cross term
    code, _ = _run(tmp_path, "corrector", {
        "operator": {"kind": "pucci_plus", "lam": 1.0, "Lam": 2.0},
        "g": "cos(2*pi*y1)", "period": [1.0, 1.0],
        "nu": [1.0, math.sqrt(2.0)], "x0": [0.0, 0.0],
        "epsilon": 0.25, "T": 4.0, "L": 2.0, "h": 0.125,
    })
    # L < 2T is a config-level refusal
    assert code == EXIT_CONFIG


def test_uncertifiable_stencil_is_numerical_error(tmp_path):
    # a11 - |a12| < 0: no monotone 9-point decomposition exists
    code, _ = _run(tmp_path, "solve", {
        "domain": {"kind": "rectangle", "lo": [0.0, 0.0], "hi": [1.0, 1.0]},
        "operator": {"kind": "linear", "lam": 0.05, "Lam": 5.0,
                     "exprs": {"a11": "1.0", "a22": "4.0", "a12": "1.9"}},
        "g": "cos(2*pi*y1)", "period": [1.0, 1.0],
        "epsilon": 0.125, "h": 1 / 64,
    })
    assert code == EXIT_NUMERICAL


def test_equidist_deterministic(tmp_path):
    cfg = {"nu": [1.0, (1 + math.sqrt(5)) / 2], "delta": 0.1,
           "R_list": [200]}
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["equidist", _write(tmp_path, f"{name}.json", cfg),
                     "--output-dir", str(out)]) == EXIT_OK
        outs.append((out / "equidist.csv").read_bytes())
    assert outs[0] == outs[1]


def test_gbar_points_command(tmp_path):
    code, out = _run(tmp_path, "gbar", {
        "operator": {"kind": "laplacian"},
        "g": "0.25", "period": [1.0, 1.0],
        "nu": [1.0, math.sqrt(2.0)],
        "points": [[0.0, 0.0]],
        "eps_list": [0.25, 0.125],
        "strip": {"T": 4.0, "L": 12.0, "h": 0.125},
    })
    assert code == EXIT_OK
    lines = (out / "gbar.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    rec = json.loads((out / "gbar.json").read_text())
    assert rec["records"][0]["equal"]


def test_corrector_outputs(tmp_path):
    code, out = _run(tmp_path, "corrector", {
        "operator": {"kind": "laplacian"},
        "g": "cos(2*pi*y1)*cos(2*pi*y2) + 0.25", "period": [1.0, 1.0],
        "nu": [1.0, math.sqrt(2.0)], "x0": [0.0, 0.0],
        "epsilon": 0.125, "T": 4.0, "L": 12.0, "h": 1 / 16,
    })
    assert code == EXIT_OK
    rec = json.loads((out / "corrector.json").read_text())
    assert abs(rec["alpha"] - 0.25) <= rec["err"] + 0.05
    prof = (out / "profile.csv").read_text().strip().splitlines()
    assert prof[0] == "t,W"
    assert len(prof) == 9
