import hashlib
import json

import numpy as np
import pytest

from dplab import __version__
from dplab.cli import dispatch, read_config_file, UsageError
from dplab.fieldio import read_field_csv


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = dispatch([*argv, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_profile(tmp_path):
    code, out = run(tmp_path, "profile", "--c", "3", "--k", "1")
    assert code == 0
    header = (out / "profile.csv").read_text().splitlines()[0]
    assert header == "x,phi,phi_x,rho,psi_tilde,w"
    side = json.loads((out / "profile.json").read_text())
    assert side["residual"] <= 1e-6
    assert set(side) >= {"c", "k", "max_height", "decay_rate", "residual"}
    assert side["max_height"] == pytest.approx(0.769861, abs=1e-6)


def test_profile_rejects_c_equal_2k(tmp_path, capsys):
    code, out = run(tmp_path, "profile", "--c", "2", "--k", "1")
    assert code == 1
    assert "c > 2k" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["profile", "--nope"],
        ["profile", "--N", "1000"],
        ["profile", "--L", "-3"],
        ["evolve", "--dt", "0"],
        ["stability-sweep", "--deltas", "a,b"],
        ["convexity", "--c-values", "1.5,3"],
    ],
)
def test_usage_errors_exit_1(tmp_path, argv):
    assert dispatch([*argv, "--out", str(tmp_path / "x")] if argv else []) == 1


def test_violation_exits_2(tmp_path):
    # 64 points cannot resolve the wave: the ODE residual check fails
    code, out = run(tmp_path, "profile", "--N", "64")
    assert code == 2
    assert manifest(out)["violations"]


def test_manifest_contents(tmp_path):
    code, out = run(tmp_path, "profile", "--c", "3.5")
    m = manifest(out)
    assert m["tool_version"] == __version__
    assert m["config"] == {"c": 3.5, "k": 1.0, "N": 4096, "L": 64.0}
    assert m["defaults_applied"] == {"k": 1.0, "N": 4096, "L": 64.0}
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nc = 4\nN=2048\nL = 48  # shorter box\n")
    code, out = run(tmp_path, "profile", "--config", str(cfg), "--N", "1024")
    assert code == 0
    m = manifest(out)
    assert m["config"] == {"c": 4.0, "k": 1.0, "N": 1024, "L": 48.0}
    assert m["defaults_applied"] == {"k": 1.0}


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("speed = 3\n")
    with pytest.raises(UsageError):
        read_config_file(bad)
    assert dispatch(["profile", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    bad.write_text("c 3\n")
    with pytest.raises(UsageError):
        read_config_file(bad)


def test_outputs_are_byte_identical(tmp_path):
    _, a = run(tmp_path, "profile", "--N", "1024", "--L", "48", name="a")
    _, b = run(tmp_path, "profile", "--N", "1024", "--L", "48", name="b")
    assert (a / "profile.csv").read_bytes() == (b / "profile.csv").read_bytes()
    assert manifest(a)["outputs"] == manifest(b)["outputs"]


def test_csv_has_full_precision(tmp_path):
    _, out = run(tmp_path, "profile", "--N", "1024", "--L", "48")
    rows = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1)
    from dplab.profile import WaveParams, build_profile
    from dplab.spectral import make_grid

    w = build_profile(WaveParams(3, 1), make_grid(48, 1024))
    assert np.array_equal(rows[:, 1], w.phi.values)


def test_evolve(tmp_path):
    code, out = run(tmp_path, "evolve", "--N", "1024", "--L", "48", "--tend", "0.5", "--dt", "0.005",
                    "--sample-every", "20", "--snapshot-every", "2")
    assert code == 0
    hist = (out / "history.csv").read_text().splitlines()
    assert hist[0] == "t,S,H,min_w,uxu_slack,linf_u"
    assert len(hist) == 1 + 6
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert [p.name for p in snaps] == ["snapshot_00000.csv", "snapshot_00002.csv", "snapshot_00004.csv",
                                       "snapshot_00005.csv"]
    assert read_field_csv(snaps[-1]).grid.N == 1024


def test_evolve_perturbed(tmp_path):
    code, out = run(tmp_path, "evolve", "--N", "1024", "--tend", "0.2", "--dt", "0.005",
                    "--delta", "0.01", "--shape", "random:3")
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["min_w"] > 0


def test_evolve_cfl_violation_is_usage_error(tmp_path):
    assert run(tmp_path, "evolve", "--N", "1024", "--dt", "0.5")[0] == 1


def test_spectrum_and_coercivity(tmp_path):
    code, out = run(tmp_path, "spectrum", name="s")
    assert code == 0
    rep = json.loads((out / "spectrum.json").read_text())
    for key in ("c", "k", "N", "L", "lambda_star", "zero_eig", "zero_cosine", "positive_gap"):
        assert key in rep
    assert rep["N"] == 1024 and rep["lambda_star"] < 0
    code, out = run(tmp_path, "coercivity", name="c")
    assert code == 0
    rep = json.loads((out / "coercivity.json").read_text())
    assert rep["alpha"] > 0 and rep["g0"] < 0 and rep["dSdc"] > 0


def test_convexity(tmp_path):
    code, out = run(tmp_path, "convexity", "--k", "1", "--c-values", "2.5,3,4")
    assert code == 0
    rows = np.loadtxt(out / "convexity.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 3) and np.all(rows[:, 2] > 0)


def test_check_identities(tmp_path):
    code, out = run(tmp_path, "check-identities", "--c", "3", "--k", "1", "--samples", "20")
    assert code == 0
    rep = json.loads((out / "identities.json").read_text())
    assert rep["rhs_identity_max_rel"] <= 1e-10
    assert 0.125 <= rep["S_over_L2sq_min"] <= rep["S_over_L2sq_max"] <= 0.5


def test_stability_sweep(tmp_path):
    code, out = run(tmp_path, "stability-sweep", "--N", "1024", "--deltas", "1e-3,1e-2", "--tend", "1",
                    "--dt", "0.002", "--sample-every", "50", "--workers", "1")
    assert code == 0
    files = sorted(p.name for p in out.glob("timeseries_*.csv"))
    assert files == ["timeseries_delta_0.001.csv", "timeseries_delta_0.01.csv"]
    header = (out / files[0]).read_text().splitlines()[0]
    assert header == "t,d2,dinf,x0,S_drift,H_drift,min_w,linfty_slack"
    summary = json.loads((out / "summary.json").read_text())
    assert {"alpha", "gamma", "r1_loglog_slope", "members"} <= set(summary)
    assert all("certificate" in m for m in summary["members"])
