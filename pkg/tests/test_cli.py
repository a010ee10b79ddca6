import csv
import subprocess
import sys

import numpy as np
import pytest

from separapde import cli
from separapde.analysis import CSV_HEADER
from separapde.fem import energy_norm_error, loads_field, solve_fem
from separapde.mesh import uniform_mesh
from separapde.problems import pointload
from separapde.separated import read_modes, solve_pgd


def _csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_solve_fem_smoke(tmp_path, capsys):
    out = tmp_path / "u.csv"
    assert cli.main(["solve", "--method", "fem", "--mesh", "41x41", "--problem", "sinsin", "--out", str(out)]) == 0
    rows = _csv(out)
    assert rows[0] == CSV_HEADER and rows[1][:4] == ["fem", "41x41", "", "1521"]
    field = loads_field((tmp_path / "u.field").read_text())
    assert field.mesh.shape == (41, 41)
    assert capsys.readouterr().out.startswith("method,")


def test_solve_pgd_writes_modes(tmp_path):
    out = tmp_path / "p.csv"
    code = cli.main(["solve", "--method", "pgd", "--mesh", "9x9", "--modes", "3", "--problem", "pointload",
                     "--out", str(out)])
    assert code in (0, 2)
    s = read_modes(tmp_path / "p.modes")
    assert s.Q == 3
    ref = solve_pgd(uniform_mesh((9, 9)), pointload(2).source, 3)
    assert all(np.array_equal(a, b) for a, b in zip(s.factors, ref.factors))
    assert _csv(out)[1][7] == ("true" if code == 0 else "false")


def test_solve_rejects_zero_modes(tmp_path, capsys):
    code = cli.main(["solve", "--method", "pgd", "--modes", "0", "--mesh", "9x9", "--out", str(tmp_path / "x.csv")])
    assert code == 1 and "modes" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_solve_tiny_budget_not_converged(tmp_path):
    out = tmp_path / "h.csv"
    code = cli.main(["solve", "--method", "hidenn-pgd", "--mesh", "9x9", "--modes", "2", "--problem", "pointload",
                     "--max-iter", "3", "--out", str(out)])
    assert code == 2
    assert _csv(out)[1][7] == "false"
    assert (tmp_path / "h.modes").read_text().splitlines()[1].startswith("nodes=")


@pytest.mark.parametrize("argv", [
    ["solve", "--method", "fem", "--mesh", "9", "--out", "x.csv"],
    ["solve", "--method", "magic", "--mesh", "9x9", "--out", "x.csv"],
    ["solve", "--method", "fem", "--mesh", "9x9", "--problem", "no-such-problem", "--out", "x.csv"],
    ["solve", "--method", "pgd-mapped", "--mesh", "9x9", "--problem", "sinsin", "--out", "x.csv"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 1


def test_problem_file(tmp_path):
    prob = tmp_path / "load.txt"
    prob.write_text("kind = pointload\npoint = 0.25, 0.5\nmagnitude = 2\n")
    out = tmp_path / "u.csv"
    assert cli.main(["solve", "--method", "fem", "--mesh", "9x9", "--problem", str(prob), "--out", str(out)]) == 0
    u = loads_field((tmp_path / "u.field").read_text())
    assert np.unravel_index(np.argmax(u.values), u.values.shape) == (2, 4)


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "7")
    assert cli.default_seed() == 7
    monkeypatch.setenv(cli.SEED_ENV, "seven")
    assert cli.main(["solve", "--method", "pgd", "--mesh", "9x9", "--out", str(tmp_path / "a.csv")]) == 1


def test_env_seed_changes_pgd_modes(tmp_path, monkeypatch):
    base = ["solve", "--method", "pgd", "--mesh", "9x9", "--modes", "2", "--problem", "pointload"]
    cli.main(base + ["--out", str(tmp_path / "a.csv")])
    monkeypatch.setenv(cli.SEED_ENV, "42")
    cli.main(base + ["--out", str(tmp_path / "b.csv")])
    cli.main(base + ["--seed", "42", "--out", str(tmp_path / "c.csv")])
    a, b, c = ((tmp_path / f"{k}.modes").read_text() for k in "abc")
    assert a == b == c


def test_default_reference():
    assert cli.default_reference((41, 41)) == 321
    assert cli.default_reference((9, 13)) == 97
    assert cli.default_reference((5, 5, 5)) == 9


def test_study_custom_spec_deterministic(tmp_path, capsys):
    spec = tmp_path / "s.cfg"
    spec.write_text("problem = pointload\nmethods = fem, pgd, cd\nmeshes = 9x9, 17x17\nmodes = 1-2\n"
                    "reference = 65\nmax_iter = 100\n")
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        assert cli.main(["study", "--spec", str(spec), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert len(_csv(tmp_path / "r0.csv")) == 1 + 2 + 4 + 4
    err = capsys.readouterr().err
    assert "method" in err and "pgd" in err


def test_study_jobs_flag_same_output(tmp_path):
    spec = tmp_path / "s.cfg"
    spec.write_text("problem = pointload\nmethods = pgd\nmeshes = 9x9, 17x17\nmodes = 1-3\nreference = 65\n")
    cli.main(["study", "--spec", str(spec), "--out", str(tmp_path / "a.csv")])
    cli.main(["study", "--spec", str(spec), "--out", str(tmp_path / "b.csv"), "--jobs", "3"])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_study_bundled_convdof(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert cli.main(["study", "--spec", "convdof", "--out", str(out)]) == 0
    rows = _csv(out)
    assert {r[0] for r in rows[1:]} == {"fem", "pgd", "cd", "hidenn-pgd"}
    err = capsys.readouterr().err
    fem_slope = float(next(line for line in err.splitlines() if line.startswith("slope fem:")).split(":")[1])
    assert fem_slope == pytest.approx(1.0, abs=0.1)


def test_study_missing_spec(tmp_path):
    assert cli.main(["study", "--spec", str(tmp_path / "nope.cfg")]) == 1


def test_study_bad_key(tmp_path):
    spec = tmp_path / "s.cfg"
    spec.write_text("problem = sinsin\nmethods = fem\nmeshes = 5x5\ncolour = red\n")
    assert cli.main(["study", "--spec", str(spec)]) == 1


def test_study_to_stdout(tmp_path, capsys):
    spec = tmp_path / "s.cfg"
    spec.write_text("problem = sinsin\nmethods = fem\nmeshes = 5x5\n")
    assert cli.main(["study", "--spec", str(spec)]) == 0
    assert capsys.readouterr().out.splitlines()[0] == ",".join(CSV_HEADER)


def test_modes_one_mode_problem(capsys):
    assert cli.main(["modes", "--problem", "sinsin", "--coarse", "9x9", "--target", "0.3"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "Q=1"


def test_modes_target_zero(capsys):
    assert cli.main(["modes", "--problem", "pointload", "--coarse", "7x8", "--target", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "Q=7" and lines[1] == "Q,mode_err" and len(lines) == 2 + 7


def test_modes_matches_sweep(capsys):
    mesh = uniform_mesh((9, 9))
    src = pointload(2).source
    u = solve_fem(mesh, src)
    sweep = [energy_norm_error(solve_pgd(mesh, src, q), u) for q in range(1, 10)]
    expected = next(q for q, e in enumerate(sweep, 1) if e <= 1e-2)
    cli.main(["modes", "--problem", "pointload", "--coarse", "9x9", "--target", "1e-2"])
    assert capsys.readouterr().out.splitlines()[0] == f"Q={expected}"


def test_modes_rejects_mapped_problem():
    assert cli.main(["modes", "--problem", "quarterring", "--coarse", "9x9", "--target", "0.1"]) == 1


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "separapde.cli", "solve", "--method", "fem", "--mesh", "5x5",
                          "--out", str(tmp_path / "u.csv")], capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "u.csv").exists()
