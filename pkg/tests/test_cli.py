import csv
import json
import os

import numpy as np
import pytest

from surfhps import cli
from surfhps import mesh as M
from surfhps.output import read_vtk_points, reference_cells
from surfhps.problems import ConfigError, PRESETS, make_config, parse_pairs


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_solve_sphere_y43_quad(tmp_path):
    out = tmp_path / "y43"
    assert run("solve", "--preset", "sphere-Y43", "--out", out) == 0
    rows = _rows(out / "error.csv")
    assert rows[0] == ["n", "h", "dofs", "linf_error"] and len(rows) == 2
    assert float(rows[1][3]) < 1e-6
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["preset"] == "sphere-Y43" and "versions" in meta and meta["seed"] == 0
    pts, fields = read_vtk_points(out / "solution.vtk")
    assert set(fields) == {"u", "u_exact", "error"}
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_solve_hemisphere_reports_error(tmp_path, capsys):
    assert run("solve", "--preset", "hemisphere-Y32", "--set", "n=6", "--set", "mesh_level=1",
               "--out", tmp_path) == 0
    assert "L_inf error" in capsys.readouterr().out


def test_missing_mesh_exit_2(tmp_path, capsys):
    assert run("solve", "--set", "geometry=file", "--set", "mesh=/no/such.off", "--out", tmp_path) == 2
    assert "/no/such.off" in capsys.readouterr().err


def test_unknown_key_and_preset_exit_2(tmp_path):
    assert run("solve", "--set", "colour=blue", "--out", tmp_path) == 2
    assert run("solve", "--set", "preset=nope", "--out", tmp_path) == 2
    assert run("solve", "--set", "n=1", "--out", tmp_path) == 2


def test_config_file_with_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sphere test\npreset = sphere-Y43\nn = 6\nelement = 'quad'\n")
    out = tmp_path / "o"
    assert run("solve", "--config", cfg, "--set", "n=7", "--out", out) == 0
    assert _rows(out / "error.csv")[1][0] == "7"


def test_parse_pairs_errors():
    with pytest.raises(ConfigError, match="key=value"):
        parse_pairs(["n 5"])
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_pairs(["n=five"])


def test_converge_single_point_has_empty_rate(tmp_path):
    out = tmp_path / "c"
    assert run("converge", "--preset", "sphere-Y43", "--set", "sweep=n:6:6", "--out", out) == 0
    assert len(_rows(out / "convergence.csv")) == 2
    assert json.loads((out / "metadata.json").read_text())["rate"] is None


def test_converge_n_sweep_rate(tmp_path):
    out = tmp_path / "c"
    assert run("converge", "--preset", "sphere-Y43", "--set", "sweep=n:4:8:2", "--out", out) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["rate_kind"] == "rho" and meta["rate"] > 3
    assert len(_rows(out / "timings.csv")) == 4


def test_converge_needs_sweep(tmp_path):
    assert run("converge", "--preset", "sphere-Y43", "--out", tmp_path) == 2


def test_evolve_T0_single_snapshot(tmp_path):
    out = tmp_path / "e"
    assert run("evolve", "--preset", "turing-spots", "--set", "T=0", "--set", "mesh_level=0",
               "--out", out) == 0
    assert sorted(os.listdir(out)) == ["metadata.json", "snapshot_0000.vtk", "stats.csv"]
    assert len(_rows(out / "stats.csv")) == 3        # header + two species


def test_evolve_is_bit_reproducible(tmp_path):
    args = ["evolve", "--preset", "turing-spots", "--set", "T=1", "--set", "mesh_level=0",
            "--set", "n=4", "--seed", "7"]
    assert run(*args, "--out", tmp_path / "a") == 0
    # rerun from the recorded metadata alone
    meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
    cfg = tmp_path / "again.cfg"
    cfg.write_text("\n".join(f"{k}={v}" for k, v in meta["config"].items() if k != "out"))
    assert run("evolve", "--config", cfg, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "stats.csv").read_bytes() == (tmp_path / "b" / "stats.csv").read_bytes()
    assert meta["seed"] == 7


def test_evolve_logistic_writes_moving_nodes(tmp_path):
    out = tmp_path / "l"
    assert run("evolve", "--preset", "logistic-sphere", "--set", "T=1", "--set", "dt=0.5",
               "--set", "mesh_level=0", "--set", "n=4", "--set", "snapshots=1", "--out", out) == 0
    pts, _ = read_vtk_points(out / "snapshot_0001.vtk")
    eta = np.exp(0.1) / (1 + (np.exp(0.1) - 1) / 1.5)
    assert np.allclose(np.linalg.norm(pts, axis=1), eta)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["geometry_rebuilds"] == 2


def test_evolve_heat_reports_error(tmp_path):
    out = tmp_path / "h"
    assert run("evolve", "--preset", "heat-Y10", "--set", "mesh_level=1", "--set", "n=6",
               "--set", "dt=0.01", "--set", "T=0.1", "--set", "snapshots=", "--out", out) == 0
    rows = _rows(out / "stats.csv")
    assert rows[0][-1] == "linf_error" and float(rows[-1][-1]) < 1e-3


def test_evolve_blow_up_exit_3(tmp_path, capsys):
    code = run("evolve", "--preset", "turing-spots", "--set", "alpha=60", "--set", "r1=0",
               "--set", "r2=0", "--set", "dt=1", "--set", "T=200", "--set", "mesh_level=0",
               "--set", "n=4", "--out", tmp_path)
    assert code == 3
    assert "non-finite state at step" in capsys.readouterr().err


def test_quadify_counts(tmp_path):
    src, dst = tmp_path / "s.off", tmp_path / "q.off"
    M.save_off(M.sphere_mesh(1), src)
    assert run("quadify", src, dst) == 0
    assert M.load_off(dst).n_elements == 120


def test_quadify_open_mesh_exit_2(tmp_path):
    src = tmp_path / "h.off"
    M.save_off(M.hemisphere_mesh(1), src)
    assert run("quadify", src, tmp_path / "q.off") == 2


def test_quality_command(tmp_path, capsys):
    src = tmp_path / "i.off"
    M.save_off(M.icosahedron(), src)
    assert run("quality", src) == 0
    assert "min_angle=60" in capsys.readouterr().out


def test_implicit_geometry(tmp_path):
    src = tmp_path / "ico.off"
    M.save_off(M.sphere_mesh(1), src)
    out = tmp_path / "imp"
    code = run("evolve", "--set", "geometry=implicit", "--set", "expression=x**2 + y**2/2 + z**2 - 1",
               "--set", f"mesh={src}", "--set", "T=0", "--set", "n=4", "--out", out)
    assert code == 0


def test_every_preset_validates():
    for name in PRESETS:
        if PRESETS[name].get("geometry") in ("implicit", "file"):
            with pytest.raises(ConfigError, match="mesh"):
                make_config(preset=name)
        else:
            make_config(preset=name)


def test_stripes_preset_parameters():
    c = make_config(preset="turing-stripes")
    assert (c.alpha, c.beta, c.r1, c.r2) == (1.899, -0.95, 1.5, 0.0)


@pytest.mark.parametrize("kind,n,cells", [("quad", 3, 9), ("triangle", 3, 9)])
def test_reference_cells_tile_element(kind, n, cells):
    assert len(reference_cells(kind, n)) == cells
