import json

import pytest

from twophase import cli
from twophase.io import read_convergence_csv


def run(capsys, *args):
    code = cli.main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


ALL_ONES = {"M_u": 1, "L_a": 1, "L_f3": 1, "a_lo": 1, "a_hi": 1, "L_f2": 1, "M_fw": 1, "L_fw": 1, "L_f1": 1, "L_s": 1}


def test_check_tau_all_ones(tmp_path, capsys):
    cfg = tmp_path / "ones.json"
    cfg.write_text(json.dumps({"constants": ALL_ONES, "L": 1.0, "tau": 0.001}))
    code, out, _ = run(capsys, "check-tau", "--config", str(cfg))
    assert code == 0
    assert "C1 = 20\n" in out and "C3 = 24\n" in out
    assert f"tau_max = {1 / 196:.6g}" in out
    assert "sensitivity of tau_max: C_omega_d=0.5" in out


def test_check_tau_grid_independent(tmp_path, capsys):
    cfg = tmp_path / "ones.json"
    cfg.write_text(json.dumps({"constants": ALL_ONES, "L": 1.0, "tau": 0.001}))
    outs = [run(capsys, "check-tau", "--config", str(cfg), "--counts", str(n), str(n))[1] for n in (2, 4, 16)]
    assert outs[0] == outs[1] == outs[2]


def test_check_tau_inadmissible(tmp_path, capsys):
    cfg = tmp_path / "ones.json"
    cfg.write_text(json.dumps({"constants": ALL_ONES, "L": 1.0, "tau": 0.01}))
    code, out, _ = run(capsys, "check-tau", "--config", str(cfg))
    assert code == 2
    assert "NOT admissible" in out


def test_check_tau_unrestricted(capsys):
    # manufactured problem: constant a, so only the convective coupling
    # M_u * L_fw restricts tau, and it vanishes when M_u = 0
    code, out, _ = run(capsys, "check-tau", "--m-u", "0.25", "--counts", "2", "2")
    assert code == 0 and "unrestricted" not in out
    code, out, _ = run(capsys, "check-tau", "--m-u", "0", "--counts", "2", "2")
    assert "tau_max = unrestricted" in out


def test_check_tau_injection_sensitivity(capsys):
    code, out, _ = run(capsys, "check-tau", "--problem", "injection3d", "--counts", "4", "4", "4")
    assert code in (0, 2)
    assert "estimated from a pilot pressure solve" in out
    assert out.count("C_omega_d=") == 3


def test_config_errors(tmp_path, capsys):
    assert run(capsys, "check-tau", "--L", "0.01")[0] == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    assert run(capsys, "check-tau", "--config", str(bad))[0] == 3
    bad.write_text("{")
    assert run(capsys, "check-tau", "--config", str(bad))[0] == 3
    assert run(capsys, "check-tau", "--tau", "0.3")[0] == 3  # not a divisor of t_end
    assert run(capsys, "check-tau", "--problem", "custom:/does/not/exist.py")[0] == 3
    code, _, err = run(capsys, "check-tau", "--L", "0.01")
    assert "L >= L_s" in err


def test_convergence_study_levels_one(tmp_path, capsys):
    code, out, err = run(capsys, "convergence-study", "--levels", "1", "--output-dir", str(tmp_path))
    assert code == 3
    assert "rates need at least two" in err
    assert (tmp_path / "convergence.csv").exists()


def test_convergence_study_two_levels_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "convergence-study", "--levels", "2", "--output-dir", str(a), "--tol-abs", "1e-6")[0] == 0
    assert run(capsys, "convergence-study", "--levels", "2", "--output-dir", str(b), "--tol-abs", "1e-6")[0] == 0
    assert (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    table = read_convergence_csv(a / "convergence.csv")
    for r in table.rows[1].rates.values():
        assert 1.8 <= r <= 2.6
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["artifacts"][0]["path"] == "convergence.csv"


def test_injection_zero_steps(tmp_path, capsys):
    code, out, _ = run(capsys, "injection", "--counts", "4", "4", "4", "--t-end", "0", "--output-dir", str(tmp_path))
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json", "saturation_00000.vtk"]


def test_injection_short_run(tmp_path, capsys):
    code, out, _ = run(capsys, "injection", "--counts", "4", "4", "4", "--t-end", "1.5",
                       "--snapshot-every", "2", "--output-dir", str(tmp_path))
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["iterations.csv", "manifest.json", "saturation_00000.vtk",
                     "saturation_00002.vtk", "saturation_00003.vtk"]
    assert "iterations per step" in out


def test_lscheme_probe(tmp_path, capsys):
    code, out, _ = run(capsys, "lscheme-probe", "--problem", "injection3d", "--counts", "4", "4", "4",
                       "--step", "2", "--output-dir", str(tmp_path))
    assert code == 0
    assert (tmp_path / "lscheme_step00002.csv").exists()
    assert "step 2" in out
    assert run(capsys, "lscheme-probe", "--step", "99", "--output-dir", str(tmp_path))[0] == 3


def test_solver_failure_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "lscheme-probe", "--problem", "injection3d", "--counts", "4", "4", "4",
                       "--s-init", "0", "--max-iters", "3", "--output-dir", str(tmp_path))
    assert code == 1
    assert "solver failure" in err


def test_custom_problem(tmp_path, capsys):
    src = tmp_path / "prob.py"
    src.write_text(
        "import numpy as np\n"
        "from twophase.model import CoefficientSet\n"
        "def make_problem(config):\n"
        "    coeffs = CoefficientSet(s=lambda th: np.clip(th, 0, 1), a=lambda s: 1 + 0 * s,\n"
        "        f_w=lambda s: 0 * s, f2=lambda s, g: np.zeros(g.n_cells),\n"
        "        f_src=lambda t0, t1, g: np.ones(g.n_cells), L_s=1.0)\n"
        "    return dict(coeffs=coeffs, counts=[3, 3], tau=0.1, t_end=0.2, L=1.0)\n"
    )
    code, out, _ = run(capsys, "lscheme-probe", "--problem", f"custom:{src}", "--output-dir", str(tmp_path))
    assert code == 0
    assert "converged=True" in out


def test_log_level_env(monkeypatch, capsys):
    monkeypatch.setenv("TWOPHASE_LOG_LEVEL", "debug")
    assert run(capsys, "check-tau", "--counts", "2", "2")[0] == 0


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
