#!/usr/bin/env python3
"""Run the convergence study grid; see --help for the flags."""

import sys

from cutfem2d.cli import main_study

if __name__ == "__main__":
    sys.exit(main_study(sys.argv[1:]))
