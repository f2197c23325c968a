#!/usr/bin/env python3
"""Regenerate the iteration-count tables (cube with P; rotated quarter annulus P vs P^G)."""
import argparse
import sys

from stiga.cli import main

RUNS = [
    ["compare-precond", "--domain", "rotated_quarter_annulus_3d", "--degree-space", "2", "--nel", "8", "16"],
]


def cube_runs():
    for n in (8, 16):
        for p in (2, 3, 4):
            yield ["solve", "--domain", "unit_cube", "--degree-space", str(p), "--degree-time", str(p),
                   "--nel", str(n), "--precond", "p"]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/tables")
    args = ap.parse_args()
    status = 0
    for i, argv in enumerate(list(cube_runs()) + RUNS):
        status |= main(argv + ["--out", f"{args.out}/run{i:02d}"])
    sys.exit(status)
