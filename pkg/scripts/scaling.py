#!/usr/bin/env python3
"""FD setup/application timings on the unit cube over mesh doublings, for several degrees."""
import argparse
import sys

from stiga.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/scaling")
    ap.add_argument("--degrees", nargs="+", default=["2", "3", "4"])
    ap.add_argument("--nel", nargs="+", default=["4", "8", "16", "32"])
    ap.add_argument("--repeats", default="5")
    args = ap.parse_args()
    status = 0
    for p in args.degrees:
        status |= main(["scaling", "--domain", "unit_cube", "--degree-space", p, "--degree-time", p,
                        "--nel", *args.nel, "--repeats", args.repeats, "--out", f"{args.out}/p{p}"])
    sys.exit(status)
