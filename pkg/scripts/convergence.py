#!/usr/bin/env python3
"""Observed orders on the quarter annulus for (p_s, p_t) in {(2,2), (3,3), (3,2), (4,3)}."""
import argparse
import sys

from stiga.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/convergence")
    ap.add_argument("--nel", nargs="+", default=["8", "16", "32", "64"])
    args = ap.parse_args()
    sys.exit(main(["convergence", "--domain", "quarter_annulus_2d", "--degree-space", "2", "3", "3", "4",
                   "--degree-time", "2", "3", "2", "3", "--nel", *args.nel, "--out", args.out]))
