import json

import numpy as np
import pytest

from cutfem2d.cli import main_study, parse_levels
from cutfem2d.study import ErrorRow, StudyConfig, attach_rates, run_study, \
    spacetime_error


def synthetic_traj(n_steps, t_end, offset_fn):
    rows = np.zeros((n_steps + 1, 12))
    dt = t_end / n_steps
    for i in range(n_steps + 1):
        t = i * dt
        off = offset_fn(t)
        rows[i, 0] = i
        rows[i, 1] = t
        rows[i, 2:4] = [0.5 + off[0], 0.8 + off[1]]
        rows[i, 4:6] = off
    return rows


def test_identical_trajectories_zero_error():
    traj = synthetic_traj(20, 1.0, lambda t: (0.1 * t, -0.2 * t))
    ev, ep = spacetime_error(traj, traj)
    assert ev == 0.0 and ep == 0.0


def test_constant_offset_error():
    base = synthetic_traj(50, 1.0, lambda t: (0.0, 0.0))
    off = synthetic_traj(50, 1.0, lambda t: (0.1, 0.0))
    ev, ep = spacetime_error(off, base)
    # sum of dt is exactly 1, so the error equals the offset
    assert ev == pytest.approx(0.1, abs=1e-12)
    assert ep == pytest.approx(0.1, abs=1e-12)


def test_linear_offset_hand_sum():
    # offset (t, 0) with dt = 0.5 and steps at t = 0.5, 1.0
    base = synthetic_traj(2, 1.0, lambda t: (0.0, 0.0))
    traj = synthetic_traj(2, 1.0, lambda t: (t, 0.0))
    ev, _ = spacetime_error(traj, base)
    assert ev == pytest.approx(np.sqrt(0.5 * (0.25 + 1.0)), abs=1e-12)


def test_mismatched_horizons_error():
    a = synthetic_traj(10, 1.0, lambda t: (0, 0))
    b = synthetic_traj(10, 0.5, lambda t: (0, 0))
    with pytest.raises(ValueError, match="horizon"):
        spacetime_error(a, b)


def test_rates_halving_and_quartering():
    rows = [ErrorRow(3, lt, 0.0125, 0.02 * 2.0 ** (-lt), 2.0 ** (-lt), 1.0)
            for lt in range(4)]
    attach_rates(rows, lx_max=3, lt_max=3)
    assert rows[0].observed_rate_t is None
    for r in rows[1:]:
        assert r.observed_rate_t == pytest.approx(1.0, abs=1e-12)

    rows = [ErrorRow(lx, 4, 0.1 * 2.0 ** (-lx), 0.001, 4.0 ** (-lx), 1.0)
            for lx in range(4)]
    attach_rates(rows, lx_max=3, lt_max=4)
    for r in rows[1:]:
        assert r.observed_rate_x == pytest.approx(2.0, abs=1e-12)


def test_parse_levels():
    assert parse_levels("0..3") == (0, 1, 2, 3)
    assert parse_levels("0,2,5") == (0, 2, 5)
    assert parse_levels("4") == (4,)


@pytest.mark.slow
def test_run_study_single_cell(tmp_path):
    study = StudyConfig(lx_list=(0,), lt_list=(0,), t_end=0.1,
                        out_dir=str(tmp_path / "out"),
                        cache_dir=str(tmp_path / "cache"))
    rows = run_study(study)
    assert len(rows) == 1
    assert rows[0].observed_rate_t is None and rows[0].observed_rate_x is None
    assert rows[0].err_velocity >= 0.0
    out = tmp_path / "out"
    for name in ("errors.csv", "reference.csv", "run.json",
                 "trajectory_Lx0_Lt0.csv", "runlog_Lx0_Lt0.csv"):
        assert (out / name).exists(), name
    header = (out / "errors.csv").read_text().splitlines()[0]
    assert header == ("Lx,Lt,h,dt,err_velocity,err_position,"
                      "observed_rate_t,observed_rate_x")
    meta = json.loads((out / "run.json").read_text())
    assert meta["failures"] == {}

    # deterministic rerun: identical bytes
    before = (out / "errors.csv").read_bytes()
    run_study(study)
    assert (out / "errors.csv").read_bytes() == before


@pytest.mark.slow
def test_cli_smoke(tmp_path, capsys):
    rc = main_study([
        "--scheme", "bdf1", "--bc", "lagrange", "--k", "2",
        "--lx", "0", "--lt", "0", "--tend", "0.06",
        "--out", str(tmp_path / "cliout"), "--cache", str(tmp_path / "cache"),
        "--reference", "self"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "err_v=" in captured.out
    assert (tmp_path / "cliout" / "errors.csv").exists()
