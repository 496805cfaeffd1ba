#!/usr/bin/env python3
"""Sweep the swap rate beta of the order perturbation and record sample
quality per value.  Trains a small toy model first if no checkpoint is
present, then writes sweep.csv and sweep_summary.dat under --out."""

import argparse
from pathlib import Path

from common import ensure_checkpoint, write_toy_config

from orderlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/beta_sweep"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000,
                    help="training steps for the toy checkpoint")
    ap.add_argument("--repetitions", type=int, default=cli.SWEEP_REPETITIONS)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    config = write_toy_config(args.out, args.seed, args.steps)
    ckpt = ensure_checkpoint(config, args.out)
    raise SystemExit(cli.main([
        "sweep", "--axis", "beta",
        "--checkpoint", str(ckpt), "--config", str(config),
        "--repetitions", str(args.repetitions), "--seed", str(args.seed),
        "--jobs", str(args.jobs), "--out", str(args.out / "sweep")]))


if __name__ == "__main__":
    main()
