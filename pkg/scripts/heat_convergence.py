#!/usr/bin/env python3
"""Heat-equation convergence study: W1 error vs the exact kernel over a
decreasing list of mollifier scales."""

import argparse
import csv
import os
import sys

from blobflow.cli import main as blobflow_main

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, os.pardir, "configs", "heat_convergence.ini")


def run(config: str, out: str) -> int:
    code = blobflow_main(["converge", "--config", config, "--out", out, "--quiet"])
    if code != 0:
        return code
    with open(os.path.join(out, "convergence.csv"), encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'eps':>6} {'delta':>8} {'W1(T/2)':>10} {'W1(T)':>10} {'wall s':>8}")
    for row in rows:
        print(
            f"{float(row['epsilon']):>6g} {float(row['delta']):>8.4f} "
            f"{float(row['w1_half']):>10.5f} {float(row['w1_final']):>10.5f} "
            f"{float(row['runtime_s']):>8.1f}"
        )
    finals = [float(row["w1_final"]) for row in rows]
    trend = "decreasing" if all(b < a for a, b in zip(finals, finals[1:])) else "mixed"
    print(f"final W1 trend over eps: {trend}")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=DEFAULT_CONFIG)
    ap.add_argument("--out", default="out/heat_convergence")
    args = ap.parse_args()
    sys.exit(run(args.config, args.out))
