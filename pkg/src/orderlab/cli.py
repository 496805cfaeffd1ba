"""Command-line surface: train, sample, sweep, quantise, eval.

Configs are INI files; every command writes a manifest into its output
directory sufficient to reproduce the run (resolved settings, seed,
format versions).  Verbosity via the ORDERLAB_LOG environment variable.
Exit codes: 0 success, 1 internal error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, datagen, metrics, model, objective
from .datagen import MelFile, ToyDistribution, read_mel, synthetic_mel, write_mel
from .model import CKPT_VERSION, Network, NetworkConfig, init_params
from .optim import AdamState
from .orders import Order
from .quantiser import QuantiserSpec, dequantise, quantise
from .rng import make_rng
from .sampler import SegmentPlan, StrategySpec, generate

log = logging.getLogger("orderlab")

# the seven swap-randomisation factors and repetition count used by the
# built-in beta sweep
BETA_SWEEP_VALUES = [0.001, 0.003, 0.01, 0.03, 0.1, 0.35, 1.0]
SWEEP_REPETITIONS = 5

SWEEP_HEADER = "axis_value,repetition,mcd,logf0_rmse,loglik,wall_ms"


class UsageError(ValueError):
    pass


def _parse_matrix(text: str) -> np.ndarray:
    return np.array([[float(x) for x in row.split(",")]
                     for row in text.split(";")])


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",")])


@dataclass
class RunConfig:
    dist: ToyDistribution
    net_config: NetworkConfig
    qspec: QuantiserSpec
    seed: int
    out: Path
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    dataset_count: int = 256
    raw: configparser.ConfigParser = None

    @classmethod
    def from_ini(cls, path, seed_override=None, out_override=None) -> "RunConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise UsageError(f"config file not found: {path}")
        try:
            run = cp["run"]
            seed = seed_override if seed_override is not None else run.getint("seed")
            if seed is None:
                raise UsageError("seed is mandatory")
            out = Path(out_override or run.get("out", "runs/out"))

            ds = cp["dataset"]
            kind = ds.get("kind")
            T, Q = ds.getint("T"), ds.getint("Q")
            dist = ToyDistribution(
                kind=kind, T=T, Q=Q,
                init=_parse_vector(ds.get("init")),
                trans=_parse_matrix(ds.get("trans")) if ds.get("trans") else None,
                emit=_parse_matrix(ds.get("emit")) if ds.get("emit") else None)

            nw = cp["network"] if cp.has_section("network") else {}
            qs = cp["quantiser"] if cp.has_section("quantiser") else {}
            qspec = QuantiserSpec(
                float(qs.get("a", 0.1)), float(qs.get("b", 1.0)),
                int(qs.get("Q", Q)))
            net_config = NetworkConfig(
                n_f=1, Q=Q,
                width=int(nw.get("width", 64)),
                layers=int(nw.get("layers", 2)),
                head=nw.get("head", model.CATEGORICAL),
                mixture_components=int(nw.get("M", 5)),
                use_positions=bool(int(nw.get("use_positions", 1))))

            tr = cp["train"] if cp.has_section("train") else {}
            return cls(dist=dist, net_config=net_config, qspec=qspec,
                       seed=seed, out=out,
                       steps=int(tr.get("steps", 2000)),
                       batch_size=int(tr.get("batch_size", 8)),
                       lr=float(tr.get("lr", 1e-3)),
                       dataset_count=int(tr.get("dataset_count", 256)),
                       raw=cp)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, UsageError):
                raise
            raise UsageError(f"bad config {path}: {e}") from e


def write_manifest(out_dir: Path, settings: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    cp = configparser.ConfigParser()
    cp["manifest"] = {
        "orderlab_version": __version__,
        "checkpoint_format": str(CKPT_VERSION),
        "mel_format": str(datagen.MEL_VERSION),
        **{k: str(v) for k, v in settings.items()},
    }
    with open(out_dir / "manifest.ini", "w") as f:
        cp.write(f)


def _strategy_from_args(args) -> StrategySpec:
    kind = args.strategy
    value_mode = getattr(args, "values", "sample")
    return StrategySpec(kind=kind, beta=args.beta, K=args.k,
                        value_mode=value_mode, t1=args.t1, t2=args.t2)


def _segments_from_arg(text: str | None):
    if not text:
        return None
    return SegmentPlan.from_lengths(int(x) for x in text.split(","))


# ---- commands ------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = RunConfig.from_ini(args.config, args.seed, args.out)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg.seed, "train")
    seqs, mus = datagen.sample_dataset(cfg.dist, cfg.dataset_count,
                                       make_rng(cfg.seed, "dataset"), cfg.qspec)
    net = Network(cfg.net_config,
                  init_params(cfg.net_config, make_rng(cfg.seed, "init")),
                  cfg.qspec, cfg.seed)
    adam = AdamState(lr=cfg.lr)
    result = objective.train(net, list(zip(seqs, mus)), cfg.steps, rng,
                             batch_size=cfg.batch_size, adam=adam)
    model.save_checkpoint(cfg.out / "model.ckpt", result.net)
    objective.write_trace_csv(cfg.out / "loss_trace.csv", result.trace)
    write_manifest(cfg.out, {"command": "train", "config": str(args.config),
                             "seed": cfg.seed, "steps": cfg.steps})
    log.info("trained %d steps, final loss %.4f", cfg.steps,
             result.trace[-1][1] if result.trace else float("nan"))
    return 0


def cmd_sample(args) -> int:
    net = model.load_checkpoint(args.checkpoint)
    spec = _strategy_from_args(args)
    plan = _segments_from_arg(args.segments)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mu:
        mu = read_mel(args.mu).grid
    elif args.config:
        cfg = RunConfig.from_ini(args.config)
        mu = cfg.dist.mu(net.qspec)
    else:
        raise UsageError("either --mu or --config is required for sampling")
    with open(out_dir / "orders.jsonl", "w") as order_log:
        for i in range(args.count):
            rng = make_rng(args.seed, "sample", i)
            res = generate(net, mu, spec, rng, plan=plan,
                           dump_steps=args.dump_steps)
            grid = dequantise(net.qspec, res.symbols)
            write_mel(out_dir / f"sample_{i:04d}.mel",
                      MelFile(grid, 0, net.qspec.a, net.qspec.b))
            order_log.write(res.log_jsonl() + "\n")
            if args.dump_steps:
                for s, g in enumerate(res.step_grids):
                    write_mel(out_dir / f"sample_{i:04d}_step_{s:03d}.mel",
                              MelFile(dequantise(net.qspec, g), 0,
                                      net.qspec.a, net.qspec.b))
    write_manifest(out_dir, {"command": "sample", "checkpoint": str(args.checkpoint),
                             "strategy": spec.kind, "seed": args.seed,
                             "count": args.count})
    return 0


def cmd_quantise(args) -> int:
    mel = read_mel(args.input)
    a = args.a if args.a is not None else float(mel.grid.min())
    b = args.b if args.b is not None else float(mel.grid.max())
    if a == b:
        b = a + 1.0
    spec = QuantiserSpec(a, b, args.q)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    symbols = quantise(spec, mel.grid)
    recon = dequantise(spec, symbols)
    datagen.write_mel_csv(out_dir / "symbols.csv", symbols)
    write_mel(out_dir / "reconstructed.mel", MelFile(recon, mel.sample_rate, a, b))
    try:
        rt = metrics.mcd(mel.grid, recon)
    except ValueError:
        rt = float("nan")
    max_err = float(np.abs(recon - np.clip(mel.grid, a, b)).max())
    with open(out_dir / "roundtrip_report.csv", "w") as f:
        f.write("q,a,b,mcd,max_abs_error\n")
        f.write(f"{args.q},{a!r},{b!r},{rt!r},{max_err!r}\n")
    write_manifest(out_dir, {"command": "quantise", "input": str(args.input),
                             "q": args.q, "a": a, "b": b, "seed": 0})
    print(f"Q={args.q} round-trip mcd={rt:.6g} dB max|err|={max_err:.6g}")
    return 0


def cmd_eval(args) -> int:
    ref = read_mel(args.reference)
    cand = read_mel(args.candidate)
    report = metrics.MetricReport()
    try:
        report.mcd = metrics.mcd(ref.grid, cand.grid)
    except ValueError as e:
        log.warning("mcd unavailable: %s", e)
    if args.f0_row is not None:
        report.logf0_rmse = metrics.logf0_rmse(
            np.exp(ref.grid[args.f0_row]), np.exp(cand.grid[args.f0_row]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w") as f:
        f.write("mcd,logf0_rmse,loglik,tv,kl\n")
        f.write(report.csv_row() + "\n")
    write_manifest(out_dir, {"command": "eval", "seed": 0})
    print(f"mcd={report.mcd:.6g} logf0_rmse={report.logf0_rmse:.6g}")
    return 0


# ---- sweep ---------------------------------------------------------------


def _sweep_cell(axis, value, rep, net, cfg, args):
    """One (value, repetition) cell; returns a metric dict."""
    rng = make_rng(args.seed, "sweep", axis, value if axis != "strategy" else str(value), rep)
    start = time.perf_counter()
    if axis == "q":
        grid, f0 = synthetic_mel(16, 48, make_rng(args.seed, "melgen", rep))
        spec = QuantiserSpec(float(grid.min()), float(grid.max()), int(value))
        recon = dequantise(spec, quantise(spec, grid))
        row = {"mcd": metrics.mcd(grid, recon), "logf0_rmse": float("nan"),
               "loglik": float("nan")}
    else:
        if axis == "beta":
            spec = StrategySpec("beta", beta=float(value), t1=args.t1, t2=args.t2)
        elif axis == "k":
            spec = StrategySpec("topk", K=int(value), value_mode="argmax",
                                t1=args.t1, t2=args.t2)
        else:  # strategy axis
            spec = StrategySpec(str(value), beta=args.beta, K=args.k,
                                t1=args.t1, t2=args.t2)
        mu = cfg.dist.mu(net.qspec)
        res = generate(net, mu, spec, rng)
        cand = dequantise(net.qspec, res.symbols)
        try:
            m = metrics.mcd(mu, cand)
        except ValueError:
            m = float("nan")
        loglik = metrics.chain_rule_loglik(net, res.symbols, mu, res.order)
        try:
            lf = metrics.logf0_rmse(np.exp(mu[0]), np.exp(cand[0]))
        except ValueError:
            lf = float("nan")
        row = {"mcd": m, "logf0_rmse": lf, "loglik": loglik}
    row["wall_ms"] = (time.perf_counter() - start) * 1e3
    return row


def cmd_sweep(args) -> int:
    axis = args.axis
    if args.sweep_values:
        values = [v for v in args.sweep_values.split(",") if v]
        if axis in ("beta",):
            values = [float(v) for v in values]
        elif axis in ("k", "q"):
            values = [int(v) for v in values]
    else:
        defaults = {"beta": BETA_SWEEP_VALUES, "q": [2, 4, 10, 100],
                    "k": [1, 2, 4, 8],
                    "strategy": ["default", "l2r", "r2l", "topk"]}
        values = defaults[axis]
    reps = args.repetitions

    cfg = net = None
    if axis != "q":
        if not args.checkpoint or not args.config:
            raise UsageError(f"{axis} sweep requires --checkpoint and --config")
        net = model.load_checkpoint(args.checkpoint)
        cfg = RunConfig.from_ini(args.config)

    cells = [(vi, value, rep) for vi, value in enumerate(values)
             for rep in range(reps)]
    results: dict[tuple, dict] = {}
    failures = []

    def run(cell):
        vi, value, rep = cell
        try:
            results[(vi, rep)] = _sweep_cell(axis, value, rep, net, cfg, args)
        except Exception as e:  # record failure, keep sweeping
            log.error("cell %s=%s rep %d failed: %s", axis, value, rep, e)
            failures.append((value, rep, str(e)))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(run, cells))
    else:
        for cell in cells:
            run(cell)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w") as f:
        f.write(SWEEP_HEADER + "\n")
        for vi, value in enumerate(values):
            for rep in range(reps):
                row = results.get((vi, rep))
                if row is None:
                    continue
                f.write(f"{value},{rep},{row['mcd']!r},{row['logf0_rmse']!r},"
                        f"{row['loglik']!r},{row['wall_ms']!r}\n")
    with open(out_dir / "sweep_summary.dat", "w") as f:
        f.write("# axis_value mean_mcd std_mcd mean_loglik std_loglik\n")
        for vi, value in enumerate(values):
            rows = [results[(vi, r)] for r in range(reps) if (vi, r) in results]
            if not rows:
                continue
            def agg(key):
                xs = np.array([r[key] for r in rows])
                xs = xs[np.isfinite(xs)]
                if not len(xs):
                    return float("nan"), float("nan")
                return float(xs.mean()), float(xs.std())

            m_mean, m_std = agg("mcd")
            l_mean, l_std = agg("loglik")
            f.write(f"{value} {m_mean!r} {m_std!r} {l_mean!r} {l_std!r}\n")
    write_manifest(out_dir, {"command": "sweep", "axis": axis,
                             "values": ",".join(str(v) for v in values),
                             "repetitions": reps, "seed": args.seed})
    if failures:
        log.error("%d sweep cells failed", len(failures))
        return 1
    return 0


# ---- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orderlab",
                                description="Order-agnostic masked-diffusion "
                                            "sequence generation at desk scale")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True)
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model from an INI config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="generate sequences from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--mu", default=None, help="conditioning grid (.mel)")
    s.add_argument("--strategy", default="default",
                   choices=["default", "l2r", "r2l", "beta", "topk", "duration"])
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--values", default="sample", choices=["sample", "argmax"])
    s.add_argument("--t1", type=float, default=1.0)
    s.add_argument("--t2", type=float, default=1.0)
    s.add_argument("--segments", default=None,
                   help="comma-separated segment lengths for duration decoding")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--dump-steps", action="store_true")
    common(s)
    s.set_defaults(fn=cmd_sample)

    q = sub.add_parser("quantise", help="round-trip a mel file through the quantiser")
    q.add_argument("--input", required=True)
    q.add_argument("--q", type=int, required=True)
    q.add_argument("--a", type=float, default=None)
    q.add_argument("--b", type=float, default=None)
    common(q, seed=False)
    q.set_defaults(fn=cmd_quantise)

    e = sub.add_parser("eval", help="compare two mel files")
    e.add_argument("--reference", required=True)
    e.add_argument("--candidate", required=True)
    e.add_argument("--f0-row", type=int, default=None)
    common(e, seed=False)
    e.set_defaults(fn=cmd_eval)

    w = sub.add_parser("sweep", help="run a sweep experiment")
    w.add_argument("--axis", required=True, choices=["beta", "k", "q", "strategy"])
    w.add_argument("--values", dest="sweep_values", default=None)
    w.add_argument("--repetitions", type=int, default=SWEEP_REPETITIONS)
    w.add_argument("--checkpoint", default=None)
    w.add_argument("--config", default=None)
    w.add_argument("--beta", type=float, default=1.0)
    w.add_argument("--k", type=int, default=1)
    w.add_argument("--t1", type=float, default=1.0)
    w.add_argument("--t2", type=float, default=1.0)
    w.add_argument("--jobs", type=int, default=1)
    common(w)
    w.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ORDERLAB_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (UsageError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
