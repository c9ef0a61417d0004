#!/usr/bin/env python3
"""Tail-probability ladder scan with the shipped Burgers config.

Writes scan.csv plus plot data under --out and prints the epsilon *
log(p_hat) column, the quantity that must fall monotonically for
superexponential closeness of the coupled pair.
"""

import argparse
import pathlib
import sys

from sclaw.cli import run

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs/burgers2mode.json"))
    ap.add_argument("--out", default="scan_out")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    argv = ["scan", "--config", args.config, "--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
