#!/usr/bin/env python3
"""Round-trip synthetic mel grids through the scalar quantiser at a
range of level counts Q and record the reconstruction MCD.  No model is
involved; this isolates the quantisation error floor."""

import argparse
from pathlib import Path

from orderlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/quantisation"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--values", default="2,4,10,32,100,256",
                    help="comma-separated Q values")
    ap.add_argument("--repetitions", type=int, default=cli.SWEEP_REPETITIONS)
    args = ap.parse_args()

    raise SystemExit(cli.main([
        "sweep", "--axis", "q", "--values", args.values,
        "--repetitions", str(args.repetitions), "--seed", str(args.seed),
        "--out", str(args.out)]))


if __name__ == "__main__":
    main()
