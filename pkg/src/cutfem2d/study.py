"""Convergence-study orchestration: run (Lx, Lt) grids, compare interface
trajectories against a reference, emit CSV tables and observed rates.

The reference is either the fitted-mesh ALE solver or the fallback
"self" mode: the finest study mesh advanced with BDF2 at a quarter of the
smallest study time step.  Temporal-rate studies use the self mode by
default so that the piecewise-linear geometry bias, which is identical on
a fixed mesh, cancels in the comparison.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ale_ref
from .mesh import build_structured_mesh
from .stepper import SchemeConfig, TRAJECTORY_COLUMNS, run_simulation, \
    trajectory_row

log = logging.getLogger(__name__)


@dataclass
class StudyConfig:
    lx_list: tuple = (0, 1, 2, 3)
    lt_list: tuple = (0, 1, 2, 3, 4)
    h0: float = 0.1
    dt0: float = 1.0 / 50.0
    scheme: str = "bdf1"
    bc_mode: str = "lagrange"
    k: int = 2
    gamma_s: float = 0.1
    gamma_lambda: float = 0.01
    c_delta_h: float | None = None
    t_end: float = 1.0
    out_dir: str = "study_out"
    reference: str = "self"          # "self" | "ale"
    ref_factor: int = 4              # dt_ref = dt_min / ref_factor
    full_grid: bool = False          # all (Lx, Lt) cells, not just the slices
    cache_dir: str | None = None
    ale_params: dict = field(default_factory=dict)

    def h(self, lx: int) -> float:
        return self.h0 * 2.0 ** (-lx)

    def dt(self, lt: int) -> float:
        return self.dt0 * 2.0 ** (-lt)

    def cell_config(self, lt: int) -> SchemeConfig:
        return SchemeConfig(k=self.k, dt=self.dt(lt), t_end=self.t_end,
                            scheme=self.scheme, bc_mode=self.bc_mode,
                            gamma_s=self.gamma_s,
                            gamma_lambda=self.gamma_lambda,
                            c_delta_h=self.c_delta_h)

    def cells(self) -> list[tuple[int, int]]:
        if self.full_grid:
            return [(lx, lt) for lx in self.lx_list for lt in self.lt_list]
        lx_max, lt_max = max(self.lx_list), max(self.lt_list)
        cells = {(lx_max, lt) for lt in self.lt_list}
        cells |= {(lx, lt_max) for lx in self.lx_list}
        return sorted(cells)


@dataclass
class ErrorRow:
    Lx: int
    Lt: int
    h: float
    dt: float
    err_velocity: float
    err_position: float
    observed_rate_t: float | None = None
    observed_rate_x: float | None = None


def _key(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _cache_path(cache_dir, payload):
    if cache_dir is None:
        return None
    os.makedirs(cache_dir, exist_ok=True)
    return os.path.join(cache_dir, f"traj_{_key(payload)}.npz")


def run_cell(h: float, config: SchemeConfig,
             cache_dir: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One simulation cell; returns (trajectory, runlog) arrays.

    Trajectory rows follow TRAJECTORY_COLUMNS, including the t = 0 row.
    """
    payload = {"kind": "eulerian", "h": h, "config": asdict(config)}
    path = _cache_path(cache_dir, payload)
    if path and os.path.exists(path):
        data = np.load(path)
        return data["traj"], data["runlog"]

    mesh = build_structured_mesh(h)
    done = [0]

    def progress(rec):
        done[0] += 1
        if done[0] % 100 == 0:
            log.info("  h=%g dt=%g: step %d (t=%.3f)", h, config.dt,
                     rec.n, rec.t)

    records = run_simulation(mesh, config, progress=progress)
    traj = np.array([trajectory_row(r) for r in records])
    runlog = np.array([(r.n, r.n_active, r.n_cut, r.n_strip, r.K)
                       for r in records], dtype=np.int64)
    if path:
        np.savez(path, traj=traj, runlog=runlog)
    return traj, runlog


def reference_trajectory(study: StudyConfig) -> np.ndarray:
    """Reference trajectory rows (TRAJECTORY_COLUMNS schema, t=0 included)."""
    dt_min = min(study.dt(lt) for lt in study.lt_list)
    dt_ref = dt_min / study.ref_factor
    cfg = SchemeConfig(k=study.k, dt=dt_ref, t_end=study.t_end,
                       scheme="bdf2", bc_mode="lagrange",
                       gamma_s=study.gamma_s,
                       gamma_lambda=study.gamma_lambda)
    if study.reference == "ale":
        params = ale_ref.AleParams(**study.ale_params)
        rows = ale_ref.run_reference(cfg, params, cache_dir=study.cache_dir)
        zero = np.zeros((1, rows.shape[1]))
        zero[0, 2:4] = cfg.center0
        return np.vstack([zero, rows])
    if study.reference != "self":
        raise ValueError(f"unknown reference mode {study.reference!r}")
    h_ref = study.h(max(study.lx_list))
    traj, _ = run_cell(h_ref, cfg, cache_dir=study.cache_dir)
    return traj


def spacetime_error(traj: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """Discrete space-time norms of the velocity and position mismatch.

    err^2 = sum_n dt |q_ref(t_n) - q_n|^2 over the trajectory's own steps,
    with the reference linearly interpolated in time.
    """
    t = traj[:, 1]
    tr = ref[:, 1]
    if t[-1] > tr[-1] + 1e-10:
        raise ValueError(f"mismatched horizons: trajectory ends at {t[-1]}, "
                         f"reference at {tr[-1]}")
    steps = traj[traj[:, 0] > 0]   # skip the initial row
    dt = steps[1, 1] - steps[0, 1] if len(steps) > 1 else steps[0, 1]

    def norm_sq(col):
        ref_interp = np.column_stack([
            np.interp(steps[:, 1], tr, ref[:, col]),
            np.interp(steps[:, 1], tr, ref[:, col + 1])])
        diff = steps[:, col:col + 2] - ref_interp
        return float(np.sum(dt * np.sum(diff ** 2, axis=1)))

    return float(np.sqrt(norm_sq(4))), float(np.sqrt(norm_sq(2)))


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.17g}"


def write_trajectory_csv(path, traj: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for row in traj:
            cells = [f"{int(row[0])}"] + [f"{v:.17g}" for v in row[1:8]] \
                + [f"{int(row[8])}", f"{row[9]:.17g}", f"{int(row[10])}",
                   f"{int(row[11])}"]
            fh.write(",".join(cells) + "\n")


def write_errors_csv(path, rows: list[ErrorRow]) -> None:
    with open(path, "w") as fh:
        fh.write("Lx,Lt,h,dt,err_velocity,err_position,"
                 "observed_rate_t,observed_rate_x\n")
        for r in rows:
            fh.write(",".join([
                str(r.Lx), str(r.Lt), _fmt(r.h), _fmt(r.dt),
                _fmt(r.err_velocity), _fmt(r.err_position),
                _fmt(r.observed_rate_t), _fmt(r.observed_rate_x)]) + "\n")


def attach_rates(rows: list[ErrorRow], lx_max: int, lt_max: int) -> None:
    """Rates along the two study slices: finest mesh for temporal rates,
    finest time step for spatial rates."""
    temporal = sorted((r for r in rows if r.Lx == lx_max), key=lambda r: r.Lt)
    for prev, cur in zip(temporal, temporal[1:]):
        if np.isfinite(prev.err_velocity) and np.isfinite(cur.err_velocity) \
                and cur.err_velocity > 0:
            cur.observed_rate_t = float(
                np.log2(prev.err_velocity / cur.err_velocity))
    spatial = sorted((r for r in rows if r.Lt == lt_max), key=lambda r: r.Lx)
    for prev, cur in zip(spatial, spatial[1:]):
        if np.isfinite(prev.err_velocity) and np.isfinite(cur.err_velocity) \
                and cur.err_velocity > 0:
            cur.observed_rate_x = float(
                np.log2(prev.err_velocity / cur.err_velocity))


def experiment_presets(cache_dir: str, out_root: str) -> dict[str, StudyConfig]:
    """The desk-scale convergence experiments the acceptance suite runs.

    bdf1: temporal slice at the finest mesh plus spatial slice at the
    smallest time step; bdf2_temporal: second-order scheme on the finest
    mesh; bc_comparison_*: one matched cell per boundary-condition mode.
    """
    os.makedirs(out_root, exist_ok=True)

    def out(name):
        return os.path.join(out_root, name)

    return {
        "bdf1": StudyConfig(lx_list=(0, 1, 2, 3), lt_list=(0, 1, 2, 3, 4),
                            scheme="bdf1", bc_mode="lagrange",
                            out_dir=out("bdf1"), cache_dir=cache_dir),
        "bdf2_temporal": StudyConfig(lx_list=(3,), lt_list=(0, 1, 2, 3, 4),
                                     scheme="bdf2", bc_mode="lagrange",
                                     out_dir=out("bdf2_temporal"),
                                     cache_dir=cache_dir),
        "bc_comparison_lagrange": StudyConfig(
            lx_list=(2,), lt_list=(3,), scheme="bdf1", bc_mode="lagrange",
            out_dir=out("bc_comparison_lagrange"), cache_dir=cache_dir),
        "bc_comparison_nitsche": StudyConfig(
            lx_list=(2,), lt_list=(3,), scheme="bdf1", bc_mode="nitsche",
            out_dir=out("bc_comparison_nitsche"), cache_dir=cache_dir),
    }


def richardson_reference_pair(study: StudyConfig):
    """The active reference and its half-step sibling, for the
    time-step-halving consistency audit."""
    dt_min = min(study.dt(lt) for lt in study.lt_list)
    h_ref = study.h(max(study.lx_list))
    out = []
    for factor in (study.ref_factor, 2 * study.ref_factor):
        cfg = SchemeConfig(k=study.k, dt=dt_min / factor, t_end=study.t_end,
                           scheme="bdf2", bc_mode="lagrange",
                           gamma_s=study.gamma_s,
                           gamma_lambda=study.gamma_lambda)
        traj, _ = run_cell(h_ref, cfg, cache_dir=study.cache_dir)
        out.append(traj)
    return out


def run_study(study: StudyConfig) -> list[ErrorRow]:
    """Run all requested cells, write CSV outputs, return the error table."""
    os.makedirs(study.out_dir, exist_ok=True)
    log.info("reference mode %s", study.reference)
    ref = reference_trajectory(study)
    write_trajectory_csv(os.path.join(study.out_dir, "reference.csv"), ref)

    rows: list[ErrorRow] = []
    failures: dict[str, str] = {}
    for lx, lt in study.cells():
        h, dt = study.h(lx), study.dt(lt)
        log.info("cell Lx=%d Lt=%d (h=%g, dt=%g)", lx, lt, h, dt)
        row = ErrorRow(lx, lt, h, dt, float("nan"), float("nan"))
        try:
            traj, runlog = run_cell(h, study.cell_config(lt), study.cache_dir)
            write_trajectory_csv(
                os.path.join(study.out_dir, f"trajectory_Lx{lx}_Lt{lt}.csv"),
                traj)
            with open(os.path.join(study.out_dir,
                                   f"runlog_Lx{lx}_Lt{lt}.csv"), "w") as fh:
                fh.write("step,n_active,n_cut,n_strip,K\n")
                for rl in runlog:
                    fh.write(",".join(str(int(v)) for v in rl) + "\n")
            row.err_velocity, row.err_position = spacetime_error(traj, ref)
        except Exception as exc:   # a failed cell must not kill the study
            log.warning("cell Lx=%d Lt=%d failed: %s", lx, lt, exc)
            failures[f"Lx{lx}_Lt{lt}"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    attach_rates(rows, max(study.lx_list), max(study.lt_list))
    rows.sort(key=lambda r: (r.Lx, r.Lt))
    write_errors_csv(os.path.join(study.out_dir, "errors.csv"), rows)
    with open(os.path.join(study.out_dir, "run.json"), "w") as fh:
        json.dump({"config": asdict(study), "failures": failures,
                   "columns": TRAJECTORY_COLUMNS}, fh, indent=2, default=str)
    return rows
