#!/usr/bin/env python3
"""Rate-function demo: penalty descent on the additive single-mode model.

The drifting target eta + 0.7 t is reachable by the constant control
h = 0.7, so the minimal action is 0.5 * 0.7^2 = 0.245; the infeasible
companion config (dead noise) must come back with the +inf sentinel and
exit code 4.
"""

import argparse
import pathlib
import sys

from sclaw.cli import run

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs/rate_additive.json"))
    ap.add_argument("--out", default="rate_out")
    args = ap.parse_args()
    return run(["rate", "--config", args.config, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
