#!/usr/bin/env python3
"""Sweep the Top-K commit size K.  Larger K trades forward passes
(ceil(T/K) per sequence) against sample quality."""

import argparse
from pathlib import Path

from common import ensure_checkpoint, write_toy_config

from orderlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/topk_sweep"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--values", default="1,2,3,6",
                    help="comma-separated K values")
    ap.add_argument("--repetitions", type=int, default=cli.SWEEP_REPETITIONS)
    args = ap.parse_args()

    config = write_toy_config(args.out, args.seed, args.steps)
    ckpt = ensure_checkpoint(config, args.out)
    raise SystemExit(cli.main([
        "sweep", "--axis", "k", "--values", args.values,
        "--checkpoint", str(ckpt), "--config", str(config),
        "--repetitions", str(args.repetitions), "--seed", str(args.seed),
        "--out", str(args.out / "sweep")]))


if __name__ == "__main__":
    main()
