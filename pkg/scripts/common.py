"""Shared helpers for the experiment scripts: a default toy
configuration and checkpoint training on demand."""

from pathlib import Path

from orderlab import cli

TOY_INI = """\
[run]
seed = {seed}
out = {out}

[dataset]
kind = markov
T = 6
Q = 3
init = 0.4,0.3,0.3
trans = 0.85,0.1,0.05;0.05,0.85,0.1;0.1,0.05,0.85

[network]
width = 32
layers = 2
head = categorical

[quantiser]
a = 0.1
b = 1.0

[train]
steps = {steps}
batch_size = 16
dataset_count = 256
lr = 2e-3
"""


def write_toy_config(out_dir: Path, seed: int, steps: int) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "toy.ini"
    path.write_text(TOY_INI.format(seed=seed, out=out_dir / "train", steps=steps))
    return path


def ensure_checkpoint(config: Path, out_dir: Path) -> Path:
    ckpt = out_dir / "train" / "model.ckpt"
    if not ckpt.exists():
        code = cli.main(["train", "--config", str(config),
                         "--out", str(out_dir / "train")])
        if code != 0:
            raise SystemExit(code)
    return ckpt
