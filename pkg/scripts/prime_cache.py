#!/usr/bin/env python3
"""Precompute every trajectory the acceptance suite needs.

Idempotent: cells already in the cache are skipped, so the script can be
re-run after an interruption.  Expect a few hours single-core on the full
grid; progress goes to stdout.
"""

import logging
import os
import sys
import time

from cutfem2d.study import experiment_presets, richardson_reference_pair, \
    run_study

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.environ.get("CUTFEM2D_CACHE", os.path.join(ROOT, "artifacts", "cache"))
OUT = os.path.join(ROOT, "artifacts", "studies")


def main():
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stdout)
    presets = experiment_presets(CACHE, OUT)
    order = ["bc_comparison_lagrange", "bc_comparison_nitsche", "bdf1",
             "bdf2_temporal"]
    for name in order:
        t0 = time.time()
        logging.info("=== study %s ===", name)
        rows = run_study(presets[name])
        logging.info("=== study %s done in %.1f min ===", name,
                     (time.time() - t0) / 60)
        for r in rows:
            logging.info("  Lx=%d Lt=%d err_v=%.6e err_p=%.6e", r.Lx, r.Lt,
                         r.err_velocity, r.err_position)
    t0 = time.time()
    logging.info("=== reference Richardson pair ===")
    richardson_reference_pair(presets["bdf1"])
    logging.info("=== Richardson pair done in %.1f min ===",
                 (time.time() - t0) / 60)


if __name__ == "__main__":
    main()
