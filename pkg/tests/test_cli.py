import json

import numpy as np
import pytest

from normdeform.cli import (
    EXIT_INVALID,
    EXIT_OK,
    EXIT_STALLED,
    ConfigError,
    config_from_dict,
    dumps,
    load_config,
    main,
)


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_minimal_config_defaults():
    cfg = config_from_dict({})
    assert cfg.problem == "scalar" and cfg.dimension == 3
    assert cfg.terms == ((1.0, 4.0),)
    assert cfg.grid.n == 4096 and cfg.grid.r_max == 20.0


@pytest.mark.parametrize(
    "raw,msg",
    [
        ({"problem": "system", "system": {"mu1": 1, "mu2": 1, "beta": 0.1, "m1": 1, "m2": 1}}, "beta must be < 0"),
        ({"terms": [{"a": 1.0, "p": 3.0}]}, "mass-supercritical and Sobolev-subcritical"),
        ({"terms": [{"a": 1.0}]}, r"terms\[0\]\.p: missing"),
        ({"grid": {"n": 10}}, "grid"),
        ({"dimension": 4}, "dimension"),
        ({"flow": {"tol": -1.0}}, "flow.tol"),
        ({"flow": {"bogus": 1}}, "unknown"),
        ({"colour": "red"}, "unknown field"),
        ({"m": -2.0}, "mass must be positive"),
        ({"problem": "system", "dimension": 2, "system": {"mu1": 1, "mu2": 1, "beta": -1, "m1": 1, "m2": 1}},
         "three-dimensional"),
    ],
)
def test_invalid_configs(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(raw)


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "m": 1.0,,\n}')
    with pytest.raises(ConfigError, match="line 2, column 12"):
        load_config(p)


def test_dumps_is_deterministic():
    a = dumps({"b": 0.1, "a": [1, 2.5, float("nan")], "c": {"y": True, "x": None}})
    b = dumps({"c": {"x": None, "y": True}, "a": [1, 2.5, float("nan")], "b": 0.1})
    assert a == b
    assert "0.10000000000000001" in a
    assert json.loads(a)["a"][2] == "nan"


def test_digest_ignores_output_location():
    a = config_from_dict({"out": "x"})
    b = config_from_dict({"out": "y"})
    assert a.digest() == b.digest()
    assert a.digest() != config_from_dict({"seed": 3}).digest()


def test_exit_code_invalid(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"terms": [{"a": 1.0, "p": 3.0}]})
    assert main(["solve-single", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "terms" in capsys.readouterr().err


def test_ground_state_command_deterministic(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["ground-state", "--out", str(o)]) == EXIT_OK
    ma, mb = (json.loads((o / "manifest.json").read_text()) for o in outs)
    assert ma["files"] == mb["files"]
    assert ma["config_hash"] == mb["config_hash"]
    ident = json.loads((outs[0] / "identities.json").read_text())
    assert abs(ident["grad_over_mass"] - 3) < 1e-3
    assert abs(ident["quartic_over_mass"] - 4) < 1e-3


def test_gn_scan_command(tmp_path):
    assert main(["gn-scan", "--out", str(tmp_path)]) == EXIT_OK
    data = np.loadtxt(tmp_path / "gn_scan.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 3
    assert np.all(data[:, 2] < 1e-3)


def test_solve_single_then_validate(tmp_path):
    out = tmp_path / "run"
    assert main(["solve-single", "--out", str(out), "--emit-plot-data"]) == EXIT_OK
    rep = json.loads((out / "minimax_report.json").read_text())
    assert rep["status"] == "Converged"
    assert (out / "plot_path_energy.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) >= {"minimax_report.json", "history.csv", "profile.csv", "config.json"}
    assert main(["validate", "--profile", str(out / "profile.csv"), "--out", str(tmp_path / "v")]) == EXIT_OK
    # a perturbed profile is not a critical point
    data = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1)
    data[:, 1] *= 1 + 0.1 * np.exp(-data[:, 0])
    bad = tmp_path / "bad.csv"
    np.savetxt(bad, data, delimiter=",", header="r,u", comments="")
    assert main(["validate", "--profile", str(bad), "--out", str(tmp_path / "w")]) == EXIT_STALLED


def test_validate_needs_profile(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == EXIT_INVALID


def test_minimax_surface_command(tmp_path):
    assert main(["minimax-surface", "--out", str(tmp_path)]) == EXIT_OK
    inter = json.loads((tmp_path / "intersection.json").read_text())
    assert inter["above_lower_bound"]
    assert 0 < inter["s0"] < 1 and 0 < inter["t0"] < 1
