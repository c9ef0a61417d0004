#!/usr/bin/env python3
"""Pathwise certificate sweep: smoothing-cost and transport bounds on
coupled paths, plus the mollifier-width error ladder.

Writes bounds.csv and error_ladder.{csv,plot.txt} under --out; every
certificate row must pass (the continuum inequalities hold exactly, so
a failure indicates a discretization problem, not bad luck).
"""

import argparse
import pathlib
import sys

from sclaw.cli import run

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs/burgers2mode.json"))
    ap.add_argument("--out", default="doubling_out")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    argv = ["doubling", "--config", args.config, "--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
