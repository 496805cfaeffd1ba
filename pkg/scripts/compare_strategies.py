#!/usr/bin/env python3
"""Compare decoding strategies (l2r, r2l, default, beta, topk) on the
same toy checkpoint.  Writes sweep.csv and sweep_summary.dat with one
row group per strategy."""

import argparse
from pathlib import Path

from common import ensure_checkpoint, write_toy_config

from orderlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/strategies"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--strategies", default="l2r,r2l,default,beta,topk")
    ap.add_argument("--repetitions", type=int, default=cli.SWEEP_REPETITIONS)
    args = ap.parse_args()

    config = write_toy_config(args.out, args.seed, args.steps)
    ckpt = ensure_checkpoint(config, args.out)
    raise SystemExit(cli.main([
        "sweep", "--axis", "strategy", "--values", args.strategies,
        "--checkpoint", str(ckpt), "--config", str(config),
        "--repetitions", str(args.repetitions), "--seed", str(args.seed),
        "--out", str(args.out / "sweep")]))


if __name__ == "__main__":
    main()
