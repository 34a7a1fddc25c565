"""End-to-end checks of the command-line interface and its exit codes."""

import subprocess
import sys

import numpy as np
import pytest

from shapegrad.cli import main
from shapegrad.fem_core import FeSpace
from shapegrad.mesh import load_mesh
from shapegrad.parabolic_problem import TimeSeriesField
from shapegrad.reports import load_field

ROBIN_CFG = """
[run]
problem = robin

[mesh]
kind = disk
refine = 4

[data]
M = const_mat 2 0 1
beta = const 1
f = const 1
g = const 0

[theta]
field = bump 1.0 0.4 0.2 -0.1 0.8

[validation]
s_list = 0.04 0.02 0.01
"""


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ mesh

def test_mesh_disk_roundtrip(tmp_path):
    out = tmp_path / "d.mesh"
    assert main(["mesh", "--disk", "--refine", "2", "-o", str(out)]) == 0
    mesh = load_mesh(str(out))
    assert mesh.n_nodes == 61 and mesh.n_triangles == 96


def test_mesh_rect_roundtrip(tmp_path):
    out = tmp_path / "r.mesh"
    assert main(["mesh", "--rect", "0", "0", "2", "1",
                 "--nx", "8", "--ny", "4", "-o", str(out)]) == 0
    mesh = load_mesh(str(out))
    assert mesh.n_nodes == 77 and mesh.n_triangles == 128


def test_mesh_requires_exactly_one_generator(tmp_path):
    out = tmp_path / "x.mesh"
    assert main(["mesh", "--disk", "--rect", "0", "0", "1", "1",
                 "-o", str(out)]) == 2
    assert main(["mesh", "-o", str(out)]) == 2
    assert not out.exists()


def test_mesh_disk_needs_refine(tmp_path):
    out = tmp_path / "x.mesh"
    assert main(["mesh", "--disk", "-o", str(out)]) == 2
    assert not out.exists()


# ------------------------------------------------------------- usage errors

def test_unknown_subcommand_exits_2(capsys):
    assert main(["bogus"]) == 2
    capsys.readouterr()


def test_missing_config_flag_exits_2():
    assert main(["derive"]) == 2


def test_config_file_not_found_exits_2(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_malformed_config_exits_2(tmp_path):
    path = _cfg(tmp_path, "problem = robin\n")  # no section header
    assert main(["solve", "--config", path]) == 2


def test_unknown_problem_exits_2(tmp_path):
    path = _cfg(tmp_path, "[run]\nproblem = resistor\n[mesh]\nkind = disk\nrefine = 2\n")
    assert main(["solve", "--config", path]) == 2


def test_invalid_log_level_exits_2(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SHAPEGRAD_LOG", "chatty")
    path = _cfg(tmp_path, ROBIN_CFG)
    assert main(["solve", "--config", path, "--out", str(tmp_path / "out")]) == 2
    assert "SHAPEGRAD_LOG" in capsys.readouterr().err


# ----------------------------------------------------------------- solve

def test_solve_writes_fields_and_roundtrips(tmp_path):
    mesh_file = tmp_path / "d.mesh"
    assert main(["mesh", "--disk", "--refine", "3", "-o", str(mesh_file)]) == 0
    cfg = ROBIN_CFG.replace("kind = disk\nrefine = 4",
                            f"file = {mesh_file}")
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["solve", "--config", path, "--out", str(out)]) == 0
    mesh = load_mesh(str(mesh_file))
    space = FeSpace(mesh, order=1)
    u = load_field(str(out / "robin-u.field"), space)
    p = load_field(str(out / "robin-p.field"), space)
    udot = load_field(str(out / "robin-udot.field"), space)
    for field in (u, p, udot):
        assert field.coefficients.shape == (space.dof_count,)
        assert np.all(np.isfinite(field.coefficients))


def test_solve_dirichlet_adjoint_is_minus_two_u(tmp_path):
    cfg = """
[run]
problem = dirichlet_energy

[mesh]
kind = disk
refine = 3

[data]
f = sine2 1 1 1
"""
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["solve", "--config", path, "--out", str(out)]) == 0
    mesh_line = (out / "dirichlet_energy-u.field").read_text().splitlines()[2]
    assert mesh_line.startswith("mesh ")
    from shapegrad.mesh import gen_disk
    space = FeSpace(gen_disk((0.0, 0.0), 1.0, 3), order=1)
    u = load_field(str(out / "dirichlet_energy-u.field"), space)
    p = load_field(str(out / "dirichlet_energy-p.field"), space)
    assert np.abs(p.coefficients + 2.0 * u.coefficients).max() <= 1e-10


def test_solve_parabolic_writes_series(tmp_path):
    cfg = """
[run]
problem = parabolic_j1

[mesh]
kind = rect
bounds = 0 0 1 1
nx = 6
ny = 6

[data]
M = const_mat 1 0 1
f = sine2 1 1 1
g = linear 0.2 0.3 -0.1
u_d = const 0
nt = 4
"""
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["solve", "--config", path, "--out", str(out)]) == 0
    from shapegrad.mesh import gen_rectangle
    space = FeSpace(gen_rectangle(0, 0, 1, 1, 6, 6), order=1)
    u = load_field(str(out / "parabolic_j1-u.field"), space)
    assert isinstance(u, TimeSeriesField)
    assert u.values.shape == (5, space.dof_count)


def test_solve_area_has_no_state(tmp_path):
    cfg = "[run]\nproblem = area\n[mesh]\nkind = disk\nrefine = 2\n"
    path = _cfg(tmp_path, cfg)
    assert main(["solve", "--config", path, "--out", str(tmp_path / "out")]) == 2


def test_quasilinear_bound_violation_names_bound(tmp_path, capsys):
    cfg = """
[run]
problem = quasilinear

[mesh]
kind = disk
refine = 2

[data]
m = const_r 0.5
f = affine_r 1 0
g = const 0
u_d = const 0
"""
    path = _cfg(tmp_path, cfg)
    assert main(["solve", "--config", path, "--out", str(tmp_path / "out")]) == 2
    assert "c1" in capsys.readouterr().err


def test_singular_system_exits_3(tmp_path, capsys):
    cfg = ROBIN_CFG.replace("beta = const 1", "beta = const 1e-300")
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["solve", "--config", path, "--out", str(out)]) == 3
    assert "solver error" in capsys.readouterr().err
    assert not (out / "robin-u.field").exists()


# ---------------------------------------------------------------- derive

def test_derive_runs_are_byte_identical(tmp_path):
    path = _cfg(tmp_path, ROBIN_CFG)
    outa, outb = tmp_path / "a", tmp_path / "b"
    assert main(["derive", "--config", path, "--out", str(outa)]) == 0
    assert main(["derive", "--config", path, "--out", str(outb)]) == 0
    for name in ("robin-report.json", "robin-fd.csv"):
        assert (outa / name).read_bytes() == (outb / name).read_bytes()


def test_derive_report_content(tmp_path):
    import json
    path = _cfg(tmp_path, ROBIN_CFG)
    out = tmp_path / "out"
    assert main(["derive", "--config", path, "--out", str(out)]) == 0
    report = json.loads((out / "robin-report.json").read_text())
    assert report["schema"] == "shapegrad-report/1"
    assert report["problem"] == "robin"
    assert report["passed"] is True
    assert set(report["checks"]) == {"fd_order", "fd_rel_gap", "duality_rel_gap"}
    assert report["fd"]["metadata"]["target"] == "dJ"
    assert "dt_pairing" not in report["terms"]
    csv_bytes = (out / "robin-fd.csv").read_bytes()
    assert csv_bytes.count(b"\r\n") == csv_bytes.count(b"\n")
    assert b",ok," in csv_bytes


def test_derive_tight_tolerance_exits_4(tmp_path):
    cfg = ROBIN_CFG.replace("s_list = 0.04 0.02 0.01",
                            "s_list = 0.4 0.2\nfd_rel_max = 1e-12")
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["derive", "--config", path, "--out", str(out)]) == 4
    csv_text = (out / "robin-fd.csv").read_text()
    assert ",fail," in csv_text


def test_derive_increasing_s_list_exits_2(tmp_path):
    cfg = ROBIN_CFG.replace("s_list = 0.04 0.02 0.01", "s_list = 0.01 0.02")
    path = _cfg(tmp_path, cfg)
    assert main(["derive", "--config", path, "--out", str(tmp_path / "out")]) == 2


def test_derive_needs_theta(tmp_path):
    cfg = ROBIN_CFG.replace("[theta]\nfield = bump 1.0 0.4 0.2 -0.1 0.8\n", "")
    path = _cfg(tmp_path, cfg)
    assert main(["derive", "--config", path, "--out", str(tmp_path / "out")]) == 2


def test_derive_area_gate(tmp_path):
    cfg = """
[run]
problem = area

[mesh]
kind = disk
refine = 5

[theta]
field = bump 1.0 0.4 0.2 -0.1 0.8

[validation]
s_list = 0.02 0.01 0.005
extrapolated_max = 1e-10
"""
    path = _cfg(tmp_path, cfg)
    assert main(["derive", "--config", path, "--out", str(tmp_path / "out")]) == 0


def test_derive_manufactured_without_tracking_density(tmp_path):
    import json
    cfg = """
[run]
problem = prop6_manufactured

[mesh]
kind = disk
refine = 3

[theta]
field = poly2 0.3 -0.2 0.1 0.15 -0.1 0.2 0.05 -0.15 0.1 0.2 -0.05 0.1
"""
    path = _cfg(tmp_path, cfg)
    out = tmp_path / "out"
    assert main(["derive", "--config", path, "--out", str(out)]) == 0
    report = json.loads((out / "prop6_manufactured-report.json").read_text())
    assert "fd" not in report
    assert report["checks"]["dual_form_gap"]["pass"] is True


# -------------------------------------------------------------- validate

def test_validate_full_suite(tmp_path):
    import json
    path = _cfg(tmp_path, ROBIN_CFG)
    out = tmp_path / "out"
    assert main(["validate", "--config", path, "--out", str(out)]) == 0
    report = json.loads((out / "robin-validate.json").read_text())
    assert set(report["checks"]) == {"fd_order", "fd_rel_gap", "taylor_order",
                                     "duality_rel_gap"}
    assert (out / "robin-taylor.csv").exists()
    assert (out / "robin-fd.csv").exists()


# ------------------------------------------------------------ entry point

def test_module_entry_point(tmp_path):
    out = tmp_path / "d.mesh"
    proc = subprocess.run([sys.executable, "-m", "shapegrad.cli", "mesh",
                           "--disk", "--refine", "1", "-o", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "nodes" in proc.stdout
    assert out.exists()


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "shapegrad" in capsys.readouterr().out
