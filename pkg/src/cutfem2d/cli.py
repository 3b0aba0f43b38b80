"""Command-line entry point for the convergence studies."""

from __future__ import annotations

import argparse
import logging
import sys

from .study import StudyConfig, run_study


def parse_levels(spec: str) -> tuple[int, ...]:
    """'0..3' or '0,2,3' -> tuple of ints."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(tok) for tok in spec.split(",") if tok)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="study",
        description="Run the moving-disk convergence study grid.")
    p.add_argument("--scheme", choices=("bdf1", "bdf2"), default="bdf1")
    p.add_argument("--bc", choices=("lagrange", "nitsche"), default="lagrange")
    p.add_argument("--k", type=int, default=2, help="velocity degree")
    p.add_argument("--lx", type=parse_levels, default=(0, 1, 2, 3),
                   help="mesh levels, e.g. 0..3 or 0,2")
    p.add_argument("--lt", type=parse_levels, default=(0, 1, 2, 3, 4),
                   help="time-step levels, e.g. 0..4")
    p.add_argument("--gamma-s", type=float, default=0.1)
    p.add_argument("--gamma-lambda", type=float, default=0.01)
    p.add_argument("--c-delta", type=float, default=None,
                   help="strip width factor (default 2 bdf1 / 4 bdf2)")
    p.add_argument("--tend", type=float, default=1.0)
    p.add_argument("--h0", type=float, default=0.1)
    p.add_argument("--dt0", type=float, default=1.0 / 50.0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reference", choices=("ale", "self"), default="self")
    p.add_argument("--full-grid", action="store_true",
                   help="run every (Lx, Lt) cell instead of the two slices")
    p.add_argument("--cache", default=None, help="trajectory cache directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main_study(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s")
    study = StudyConfig(
        lx_list=args.lx, lt_list=args.lt, h0=args.h0, dt0=args.dt0,
        scheme=args.scheme, bc_mode=args.bc, k=args.k,
        gamma_s=args.gamma_s, gamma_lambda=args.gamma_lambda,
        c_delta_h=args.c_delta, t_end=args.tend, out_dir=args.out,
        reference=args.reference, full_grid=args.full_grid,
        cache_dir=args.cache)
    rows = run_study(study)
    for r in rows:
        rate_t = f"{r.observed_rate_t:.3f}" if r.observed_rate_t else "  -  "
        rate_x = f"{r.observed_rate_x:.3f}" if r.observed_rate_x else "  -  "
        print(f"Lx={r.Lx} Lt={r.Lt}  err_v={r.err_velocity:.6e} "
              f"err_p={r.err_position:.6e}  rate_t={rate_t} rate_x={rate_x}")
    return 0


if __name__ == "__main__":
    sys.exit(main_study())
