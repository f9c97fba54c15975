import csv
import math

import numpy as np
import pytest

from hpslab import ParameterError
from hpslab.bench import (CSV_COLUMNS, RunConfig, evaluate_field, emit_csv, loglog_slope, read_ppm,
                          render_field, run_p_sweep, run_scaling, run_single)
from hpslab.cli import build_parser, main, read_config_file
from hpslab.mesh import MeshParams, build_mesh
from hpslab.problems import make_analytic_helmholtz

TIMING = {"t_leaf", "t_assemble", "t_factor", "t_solve", "t_reconstruct"}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("kw, expected", [
    (dict(p=16, nx=8), (8, 8, 2 * math.pi * 12, 10.0)),
    (dict(p=16, wavelengths=10.5, ppw=10), (7, 7, 2 * math.pi * 10.5, 10.0)),
    (dict(p=22, wavelengths=10.5, ppw=10), (5, 5, 2 * math.pi * 10.5, 10.0)),
    (dict(p=8, N_target=100_000, ppw=10), (45, 45, 2 * math.pi * 31.5, 10.0)),
    (dict(p=16, nx=8, kappa=2 * math.pi * 4), (8, 8, 2 * math.pi * 4, 30.0)),
])
def test_config_resolution(kw, expected):
    nx, ny, kappa, ppw = RunConfig(**kw).resolve()
    assert (nx, ny) == expected[:2]
    assert kappa == pytest.approx(expected[2])
    assert ppw == pytest.approx(expected[3])


def test_config_rejects():
    with pytest.raises(ParameterError):
        RunConfig(preset="nope", nx=4)
    with pytest.raises(ParameterError):
        RunConfig(solver="superlu", nx=4)
    with pytest.raises(ParameterError):
        RunConfig(p=16)
    with pytest.raises(ParameterError):
        RunConfig(p=16, nx=8, wavelengths=10, ppw=10).resolve()


@pytest.mark.parametrize("solver, tol", [("oracle", 1e-11), ("slablu", 1e-10)])
def test_single_residual(solver, tol):
    rec = run_single(RunConfig(p=16, nx=8, ppw=10, solver=solver))
    assert rec.errors.relerr_res <= tol
    assert rec.N == 121 ** 2 and rec.n_active == 2 * 7 * 8 * 14
    assert all(t >= 0 for t in rec.timings.values())
    assert rec.mem_bytes > 0
    assert rec.build_time >= rec.timings["factor"]


def test_pulse_constant_smoke():
    rec = run_single(RunConfig(preset="pulse-constant", p=12, nx=6, wavelengths=5.3), keep=True)
    assert np.all(np.isfinite(rec.solution))
    assert rec.errors.relerr_true is None


def test_memory_counts_leaf_factors_when_stored():
    a = run_single(RunConfig(p=8, nx=4, storage_policy="recompute"))
    b = run_single(RunConfig(p=8, nx=4, storage_policy="store"))
    assert b.mem_bytes - a.mem_bytes == 16 * (36 * 36 * 8 + 36 * 4)


def test_p_sweep_small():
    res = run_p_sweep(RunConfig(N_target=3000, ppw=10), [6, 8, 12])
    assert [r.p for r in res.records] == [6, 8, 12]
    assert all(abs(r.ppw - 10) < 1e-9 for r in res.records)
    n_active = res.summary["n_active"]
    assert n_active[0] > n_active[1] > n_active[2]
    assert res.summary["factor_ratio"] >= 1.0
    with pytest.raises(ParameterError):
        run_p_sweep(RunConfig(N_target=3000), [3, 8])


def test_scaling_small():
    res = run_scaling(RunConfig(p=8, nx=2, ppw=10), [500, 2000, 8000])
    Ns = [r.N for r in res.records]
    assert Ns == sorted(Ns) and Ns[-1] / Ns[0] > 10
    assert set(res.summary["slopes"]) == {"leaf", "factor", "solve"}
    errs = [r.errors.relerr_true for r in res.records]
    assert max(errs) / min(errs) <= 10
    with pytest.raises(ParameterError):
        run_scaling(RunConfig(p=8, nx=2), [2000, 500])


def test_loglog_slope():
    assert loglog_slope([1, 10, 100], [3, 300, 30000]) == pytest.approx(2.0)


def test_csv_lines_and_round_trip(tmp_path):
    recs = [run_single(RunConfig(p=p, nx=3, ppw=10)) for p in (6, 7, 8)]
    path = emit_csv(recs, tmp_path / "out.csv")
    text = path.read_text().splitlines()
    assert len(text) == 4
    assert text[0].split(",") == list(CSV_COLUMNS)
    rows = read_rows(path)
    for rec, row in zip(recs, rows):
        full = rec.row()
        for col in ("kappa", "ppw", "relerr_res", "relerr_true", "t_factor"):
            assert float(row[col]) == pytest.approx(full[col], rel=5e-6)
            assert "e" in row[col]
        assert int(row["N"]) == rec.N and int(row["mem_bytes"]) == rec.mem_bytes


def test_csv_empty_relerr_true(tmp_path):
    rec = run_single(RunConfig(preset="pulse-constant", p=8, nx=3, wavelengths=2))
    row = read_rows(emit_csv([rec], tmp_path / "p.csv"))[0]
    assert row["relerr_true"] == ""
    with pytest.raises(ParameterError):
        emit_csv([], tmp_path / "none.csv")


def test_csv_io_error(tmp_path):
    rec = run_single(RunConfig(p=6, nx=2))
    with pytest.raises(OSError, match="cannot write CSV"):
        emit_csv([rec], tmp_path / "missing" / "x.csv")


def test_end_to_end_determinism(tmp_path):
    cfg = RunConfig(p=10, nx=4, ppw=10)
    rows = [read_rows(emit_csv([run_single(cfg)], tmp_path / f"{i}.csv"))[0] for i in range(2)]
    for row in rows:
        for col in TIMING:
            row.pop(col)
    assert rows[0] == rows[1]


def test_evaluate_field_reproduces_smooth_function():
    topo = build_mesh(MeshParams(3, 3, 14))
    u = np.exp(topo.node_coords[:, 0]) * np.sin(3 * topo.node_coords[:, 1])
    P = np.random.default_rng(0).random((200, 2))
    np.testing.assert_allclose(evaluate_field(topo, u, P), np.exp(P[:, 0]) * np.sin(3 * P[:, 1]),
                               atol=1e-9)
    with pytest.raises(ParameterError):
        evaluate_field(topo, u, np.array([[1.5, 0.5]]))


def test_render_constant_and_dimensions(tmp_path):
    topo = build_mesh(MeshParams(2, 3, 6, domain=(0, 1, 0, 1.5)))
    img = read_ppm(render_field(topo, np.full(topo.N, 2.0), (37, 23), tmp_path / "c.ppm"))
    assert img.shape == (23, 37, 3)
    assert np.all(img == img[0, 0])
    zero = read_ppm(render_field(topo, np.zeros(topo.N), 8, tmp_path / "z.ppm"))
    assert np.all(zero == 255)


def test_render_wave_count(tmp_path):
    kappa = 2 * np.pi * 10
    topo = build_mesh(MeshParams(8, 8, 16))
    u = make_analytic_helmholtz(kappa).true_solution(topo.node_coords)
    img = read_ppm(render_field(topo, u, 400, tmp_path / "j0.ppm")).astype(int)
    row = img[200]
    sign = np.sign(row[:, 0] - row[:, 2])
    crossings = np.count_nonzero(np.diff(sign[sign != 0]))
    # J0 has two sign changes per wavelength; 10 wavelengths span the width
    assert 18 <= crossings <= 22


def test_render_io_error(tmp_path):
    topo = build_mesh(MeshParams(2, 2, 5))
    with pytest.raises(OSError, match="cannot write image"):
        render_field(topo, np.zeros(topo.N), 4, tmp_path / "no" / "x.ppm")


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\np = 10\nnx = 3\nppw = 12\nsolver = oracle\nb_param = depth=0.5\n")
    assert read_config_file(cfg)[:4] == ["--p", "10", "--nx", "3"]
    from hpslab.cli import _expand_config, config_from_args
    argv = _expand_config(["single", "--config", str(cfg), "--nx", "4"])
    args = build_parser().parse_args(argv)
    args.N_target = None
    c = config_from_args(args)
    assert (c.p, c.nx, c.ppw, c.solver, c.b_params) == (10, 4, 12.0, "oracle", {"depth": 0.5})


@pytest.mark.parametrize("cmd, extra, out", [
    ("single", ["--nx", "3"], "single.csv"),
    ("p-sweep", ["--p-list", "6,8", "--N-target", "2000"], "p_sweep.csv"),
    ("scaling", ["--N-list", "500,2000"], "scaling.csv"),
    ("render", ["--nx", "3", "--resolution", "32"], "field.ppm"),
])
def test_cli_commands(tmp_path, capsys, cmd, extra, out):
    assert main([cmd, "--p", "8", "--out-dir", str(tmp_path), *extra]) == 0
    assert (tmp_path / out).exists()
    assert "relerr_res" in capsys.readouterr().out
