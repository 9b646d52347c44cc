import csv
import json

import pytest

from stokeslab.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_writes_vtk_and_json(tmp_path, capsys):
    code, _, _ = run(capsys, "solve", "--problem", "s1", "--case", "ms1", "--n", "4",
                     "--vtk", str(tmp_path / "out"))
    assert code == 0
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["s1_ms1_n4.json", "s1_ms1_n4.vtk"]
    diag = json.loads((tmp_path / "out" / "s1_ms1_n4.json").read_text())
    assert diag["errors"]["err_u_h1"] < 1e-8
    assert "POINT_DATA" in (tmp_path / "out" / "s1_ms1_n4.vtk").read_text()


def test_verify_s1_schema(tmp_path, capsys):
    code, out, _ = run(capsys, "verify-s1", "--case", "ms1", "--n", "8",
                       "--eps", "1e-3,1e-2,1e-1", "--out", str(tmp_path))
    assert code == 0 and "PASS" in out
    with open(tmp_path / "verify_s1_ms1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["level", "h", "eps", "lhs_u", "lhs_p", "rhs_flux", "rhs_trace", "ratio"]
    assert len(rows) == 4
    summary = json.loads((tmp_path / "verify_s1_ms1_summary.json").read_text())
    assert summary["passed"] and set(summary["flags"]) == {"eps_affinity", "ratio_spread"}


def test_verify_s2_two_levels(tmp_path, capsys):
    code, _, _ = run(capsys, "verify-s2", "--n", "4,8", "--eps", "1e-2,1e-1",
                     "--perturb", "traction", "--out", str(tmp_path))
    assert code == 0
    summary = json.loads((tmp_path / "verify_s2_ms1_summary.json").read_text())
    assert "mesh_stability" in summary["flags"]
    assert len((tmp_path / "verify_s2_ms1.csv").read_text().splitlines()) == 5


def test_empty_gamma2_layout(capsys):
    code, _, err = run(capsys, "solve", "--problem", "s2", "--layout", "all-gamma1")
    assert code == 1 and "Γ2" in err


def test_unknown_flag_exits_one(capsys):
    assert run(capsys, "solve", "--bogus")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "solve", "--n", "0")[0] == 1
    assert run(capsys, "verify-s1", "--eps", "-1")[0] == 1


def test_numerical_failure_exits_two(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "--problem", "s2", "--grad-div", "0", "--n", "8",
                       "--out", str(tmp_path))
    assert code == 2 and "singular" in err
    assert not list(tmp_path.iterdir())


def test_grad_div_only_for_s2(capsys):
    assert run(capsys, "solve", "--problem", "s1", "--grad-div", "1")[0] == 1


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        code, text, _ = run(capsys, name, "--help")
        assert code == 0
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_outputs_are_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "convergence", "--case", "ms2", "--levels", "2",
                   "--out", str(tmp_path / d))[0] == 0
        assert run(capsys, "verify-s1", "--n", "4", "--out", str(tmp_path / d))[0] == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# mesh run\nn = 3\nlayout = outlet-right\n")
    assert run(capsys, "mesh", "--config", str(cfg), "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "mesh_n3.txt").exists()
    # explicit flags win over the file
    assert run(capsys, "mesh", "--config", str(cfg), "--n", "2", "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "mesh_n2.txt").exists()


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("levels=3\n")
    code, _, err = run(capsys, "mesh", "--config", str(cfg))
    assert code == 1 and "unknown key" in err
    assert run(capsys, "mesh", "--config", str(tmp_path / "missing.cfg"))[0] == 1


def test_constants_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "constants", "--n", "2,4", "--out", str(tmp_path))
    assert code == 0
    data = json.loads((tmp_path / "constants.json").read_text())
    assert set(data["constants"]) == {"2", "4"}
    assert data["flags"]["beta_infsup_bounded"]
    assert ("PASS" in out) == data["passed"]


def test_mesh_with_vtk(tmp_path, capsys):
    assert run(capsys, "mesh", "--n", "2", "--out", str(tmp_path), "--vtk", str(tmp_path))[0] == 0
    assert "CELLS 8" in (tmp_path / "mesh_n2.vtk").read_text()
