"""Order-agnostic training objective and training loop.

The single-sample estimator draws a step t and an order, masks every
position not revealed before step t, and weights the masked
log-probabilities by T / (number masked).  The exact-ELBO mode averages
the same estimand over every (t, order) pair; since the estimand
depends on the order only through the set of revealed positions, the
average runs over revealed subsets, which is exact and exponentially
cheaper than enumerating permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mod
from .autodiff import Tape, Tensor
from .model import Network
from .optim import AdamState, adam_step
from .orders import Order, uniform_order

MAX_ELBO_T = 6


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite loss at step {step}")


@dataclass
class LossReport:
    loss: float
    t: int                      # 1-based factorisation step
    sigma: Order
    masked_count: int
    per_position_logprob: np.ndarray  # (n_f, T)


def mask_from_order(sigma: Order, t: int) -> np.ndarray:
    """Decoded-position indicator for step t (1-based): positions that
    appear before step t in the order."""
    m = np.zeros(sigma.T)
    m[sigma.perm[: t - 1]] = 1.0
    return m


def training_loss(config, params, y: np.ndarray, mu: np.ndarray,
                  rng: np.random.Generator | None = None,
                  t: int | None = None, sigma: Order | None = None):
    """Single-sequence loss; returns (scalar Tensor, LossReport).

    y: (n_f, T) integer levels; mu: (n_f, T) reals.  t and sigma may be
    frozen for oracle tests; otherwise they are sampled from rng.
    """
    y = np.asarray(y, dtype=np.int64)
    n_f, T = y.shape
    if sigma is None:
        sigma = uniform_order(T, rng)
    if t is None:
        t = int(rng.integers(1, T + 1))
    m = mask_from_order(sigma, t)
    out = mod.forward(config, params, y.T[None, :, :], mu[None, :, :], m[None, :])
    lp = mod.log_prob(out, y.T[None, :, :])            # (1, T, n_f)
    masked = (1.0 - m)[None, :, None]
    weight = T / (T - t + 1)
    loss = ad.tsum(lp * Tensor(masked)) * (-weight)
    report = LossReport(float(loss.data), t, sigma, int(T - t + 1),
                        lp.data[0].T.copy())
    return loss, report


def batch_training_loss(config, params, ys, mus, rng: np.random.Generator):
    """Mean single-sample loss over a minibatch, one (t, order) each.

    Sequences may have different lengths; shorter ones are padded and
    the padding is excluded from attention and loss.
    """
    B = len(ys)
    Ts = [y.shape[1] for y in ys]
    n_f = ys[0].shape[0]
    Tmax = max(Ts)
    symbols = np.zeros((B, Tmax, n_f), dtype=np.int64)
    mu = np.zeros((B, n_f, Tmax))
    m = np.zeros((B, Tmax))
    pad = np.zeros((B, Tmax))
    weights = np.zeros(B)
    ts = []
    for i, (y, mu_i) in enumerate(zip(ys, mus)):
        T = Ts[i]
        sigma = uniform_order(T, rng)
        t = int(rng.integers(1, T + 1))
        ts.append(t)
        symbols[i, :T] = y.T
        mu[i, :, :T] = mu_i
        m[i, :T] = mask_from_order(sigma, t)
        pad[i, :T] = 1.0
        weights[i] = T / (T - t + 1)
    out = mod.forward(config, params, symbols, mu, m,
                      pad_mask=pad if Tmax != min(Ts) else None)
    lp = mod.log_prob(out, symbols)
    sel = ((1.0 - m) * pad)[:, :, None] * (weights / B)[:, None, None]
    loss = ad.tsum(lp * Tensor(sel)) * -1.0
    return loss, ts


def elbo_estimand(config, params, y, mu, t: int, sigma: Order) -> float:
    """Value of the Alg.-style estimand (signed log-prob form) for a
    frozen (t, order) pair; equals minus the training loss."""
    loss, _ = training_loss(config, params, y, mu, t=t, sigma=sigma)
    return -float(loss.data)


def exact_elbo(config, params, y: np.ndarray, mu: np.ndarray) -> float:
    """Exact expectation of the estimand over all (t, order) pairs."""
    y = np.asarray(y, dtype=np.int64)
    n_f, T = y.shape
    if T > MAX_ELBO_T:
        raise ValueError(f"exact_elbo supports T <= {MAX_ELBO_T}, got {T}")
    subsets = [s for s in range(1 << T) if bin(s).count("1") < T]
    B = len(subsets)
    masks = np.zeros((B, T))
    for i, s in enumerate(subsets):
        for pos in range(T):
            if s >> pos & 1:
                masks[i, pos] = 1.0
    symbols = np.broadcast_to(y.T, (B, T, n_f))
    mus = np.broadcast_to(mu, (B, n_f, T))
    out = mod.forward(config, params, symbols, mus, masks)
    lp = mod.log_prob(out, symbols).data        # (B, T, n_f)
    total = 0.0
    for i, s in enumerate(subsets):
        size = bin(s).count("1")
        weight = 1.0 / (T * math.comb(T, size))
        contrib = (lp[i] * (1.0 - masks[i])[:, None]).sum()
        total += weight * (T / (T - size)) * contrib
    return float(total)


@dataclass
class TrainResult:
    net: Network
    trace: list  # rows: (step, loss, t, masked_count)


def train(net: Network, dataset, steps: int, rng: np.random.Generator,
          batch_size: int = 8, adam: AdamState | None = None,
          log_every: int = 0) -> TrainResult:
    """Adam training with one sampled (t, order) per sequence per step.

    dataset: list of (y, mu) pairs with y (n_f, T) ints, mu (n_f, T).
    The loss trace logs the first batch element's sampled t.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    adam = adam or AdamState()
    params = dict(net.params)
    trace = []
    for step in range(steps):
        idx = rng.integers(0, len(dataset), size=min(batch_size, len(dataset)))
        ys = [dataset[i][0] for i in idx]
        mus = [dataset[i][1] for i in idx]
        leaves = {k: Tensor(v) for k, v in params.items()}
        with Tape() as tape:
            loss, ts = batch_training_loss(net.config, leaves, ys, mus, rng)
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise DivergenceError(step)
        names = sorted(leaves)
        gs = tape.gradients(loss, [leaves[n] for n in names])
        grads = dict(zip(names, gs))
        params = adam_step(adam, params, grads)
        trace.append((step, lval, ts[0], ys[0].shape[1] - ts[0] + 1))
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {lval:.4f}")
    out = Network(net.config, params, net.qspec, net.seed)
    return TrainResult(out, trace)


def write_trace_csv(path, trace):
    with open(path, "w") as f:
        f.write("step,loss,t,masked_count\n")
        for step, loss, t, mc in trace:
            f.write(f"{step},{loss!r},{t},{mc}\n")
