"""Desk-scale data sources.

Three exactly-solvable toy processes (iid categorical, order-1 Markov
chain, HMM) with brute-force any-order conditional oracles, a synthetic
mel-like grid generator with a known pitch channel, and a small binary /
CSV file format for real-valued grids.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .quantiser import QuantiserSpec, dequantise

MAX_ENUM = 10**6


class EnumerationTooLarge(ValueError):
    pass


def _check_rows(table: np.ndarray, name: str):
    if not np.allclose(table.sum(axis=-1), 1.0, atol=1e-12):
        raise ValueError(f"{name} rows must sum to 1")


@dataclass
class ToyDistribution:
    """A length-T process over symbols {0..Q-1}, n_f = 1."""

    kind: str  # iid | markov | hmm
    T: int
    Q: int
    init: np.ndarray = None          # iid/markov: (Q,); hmm: (S,) over states
    trans: np.ndarray = None         # markov: (Q,Q); hmm: (S,S)
    emit: np.ndarray = None          # hmm only: (S,Q)
    n_f: int = 1

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=np.float64)
        _check_rows(self.init, "init")
        if self.kind == "iid":
            if len(self.init) != self.Q:
                raise ValueError("iid marginal must have Q entries")
        elif self.kind == "markov":
            self.trans = np.asarray(self.trans, dtype=np.float64)
            _check_rows(self.trans, "trans")
            if self.trans.shape != (self.Q, self.Q):
                raise ValueError("markov transition must be Q x Q")
        elif self.kind == "hmm":
            self.trans = np.asarray(self.trans, dtype=np.float64)
            self.emit = np.asarray(self.emit, dtype=np.float64)
            _check_rows(self.trans, "trans")
            _check_rows(self.emit, "emit")
            if self.emit.shape[1] != self.Q:
                raise ValueError("emission table must have Q columns")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    # ---- exact quantities ------------------------------------------------

    def joint_logp(self, y: np.ndarray) -> float:
        """log p(y) for a full assignment y of length T."""
        y = np.asarray(y, dtype=np.int64).reshape(self.T)
        if self.kind == "iid":
            return float(np.log(self.init[y]).sum())
        if self.kind == "markov":
            lp = np.log(self.init[y[0]])
            for t in range(1, self.T):
                lp += np.log(self.trans[y[t - 1], y[t]])
            return float(lp)
        return float(np.log(self.forward_likelihood(y)))

    def forward_likelihood(self, y: np.ndarray) -> float:
        """HMM likelihood by the forward algorithm."""
        y = np.asarray(y, dtype=np.int64).reshape(self.T)
        alpha = self.init * self.emit[:, y[0]]
        for t in range(1, self.T):
            alpha = (alpha @ self.trans) * self.emit[:, y[t]]
        return float(alpha.sum())

    def brute_likelihood(self, y: np.ndarray) -> float:
        """HMM likelihood by explicit sum over hidden paths (oracle)."""
        y = np.asarray(y, dtype=np.int64).reshape(self.T)
        S = len(self.init)
        total = 0.0
        for path in itertools.product(range(S), repeat=self.T):
            p = self.init[path[0]] * self.emit[path[0], y[0]]
            for t in range(1, self.T):
                p *= self.trans[path[t - 1], path[t]] * self.emit[path[t], y[t]]
            total += p
        return total

    def marginals(self) -> np.ndarray:
        """Per-position marginal symbol distribution, shape (T, Q)."""
        if self.kind == "iid":
            return np.tile(self.init, (self.T, 1))
        out = np.empty((self.T, self.Q))
        if self.kind == "markov":
            p = self.init.copy()
            for t in range(self.T):
                out[t] = p
                p = p @ self.trans
        else:
            s = self.init.copy()
            for t in range(self.T):
                out[t] = s @ self.emit
                s = s @ self.trans
        return out

    def entropy(self) -> float:
        """Entropy of the full sequence distribution, in nats."""
        if self.Q**self.T > MAX_ENUM:
            raise EnumerationTooLarge(f"Q^T = {self.Q**self.T} too large")
        h = 0.0
        for y in itertools.product(range(self.Q), repeat=self.T):
            p = np.exp(self.joint_logp(np.array(y)))
            if p > 0:
                h -= p * np.log(p)
        return h

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "iid":
            return rng.choice(self.Q, size=self.T, p=self.init).astype(np.int64)
        y = np.empty(self.T, dtype=np.int64)
        if self.kind == "markov":
            y[0] = rng.choice(self.Q, p=self.init)
            for t in range(1, self.T):
                y[t] = rng.choice(self.Q, p=self.trans[y[t - 1]])
        else:
            s = rng.choice(len(self.init), p=self.init)
            for t in range(self.T):
                y[t] = rng.choice(self.Q, p=self.emit[s])
                if t + 1 < self.T:
                    s = rng.choice(len(self.init), p=self.trans[s])
        return y

    def mu(self, spec: QuantiserSpec) -> np.ndarray:
        """Analytic conditioning prior: per-position expected emission,
        dequantised to real values.  Shape (1, T)."""
        levels = np.arange(self.Q)
        exp_level = self.marginals() @ levels
        real = spec.a + exp_level / (spec.Q - 1) * (spec.b - spec.a)
        return real.reshape(1, self.T)


def sample_dataset(dist: ToyDistribution, count: int, rng: np.random.Generator,
                   spec: QuantiserSpec):
    """I.i.d. sequences plus matching conditioning grids."""
    mu = dist.mu(spec)
    seqs = [dist.sample(rng).reshape(1, dist.T) for _ in range(count)]
    return seqs, [mu.copy() for _ in seqs]


def exact_conditional(dist: ToyDistribution, observed: dict[int, int],
                      target: int) -> np.ndarray:
    """Ground-truth p(y_target = . | observed), by brute-force summation
    over all completions of the unobserved positions."""
    if dist.Q**dist.T > MAX_ENUM:
        raise EnumerationTooLarge(f"Q^T = {dist.Q**dist.T} exceeds {MAX_ENUM}")
    if target in observed:
        raise ValueError(f"target position {target} is already observed")
    free = [i for i in range(dist.T) if i not in observed and i != target]
    weights = np.zeros(dist.Q)
    y = np.empty(dist.T, dtype=np.int64)
    for pos, val in observed.items():
        y[pos] = val
    for v in range(dist.Q):
        y[target] = v
        for fill in itertools.product(range(dist.Q), repeat=len(free)):
            for pos, val in zip(free, fill):
                y[pos] = val
            weights[v] += np.exp(dist.joint_logp(y))
    total = weights.sum()
    if total <= 0:
        raise ValueError("observed assignment has zero probability")
    return weights / total


# ---- synthetic mel-like grids -------------------------------------------


def synthetic_mel(n_f: int, T: int, rng: np.random.Generator,
                  f0_row: int = 0):
    """A positive, harmonically structured grid plus its pitch track.

    Row f0_row carries ln(f0); the f0 track in Hz is returned alongside.
    """
    f0 = 140.0 + 40.0 * np.sin(np.linspace(0, 2 * np.pi, T) * rng.uniform(0.5, 2.0)
                               + rng.uniform(0, 2 * np.pi))
    f0 = f0 + rng.normal(0, 2.0, size=T)
    grid = np.empty((n_f, T))
    rows = np.arange(n_f)[:, None]
    envelope = np.exp(-rows / max(n_f, 2) * rng.uniform(1.0, 3.0))
    ripple = 0.3 * np.sin(rows * rng.uniform(0.2, 1.0) + np.linspace(0, 4, T)[None, :])
    # keep values O(1) so the grid behaves like log-domain amplitudes
    grid[:] = 1.0 + 2.5 * envelope * (1.0 + ripple)
    grid += 0.05 * np.abs(rng.normal(size=(n_f, T)))
    if 0 <= f0_row < n_f:
        grid[f0_row] = np.log(f0)
    return grid, f0


# ---- grid file formats ---------------------------------------------------

MEL_MAGIC = b"OLML"
MEL_VERSION = 1


class MelFormatError(ValueError):
    pass


@dataclass
class MelFile:
    grid: np.ndarray  # (n_f, T) float64
    sample_rate: int = 0
    a: float = 0.0
    b: float = 1.0

    @property
    def n_f(self) -> int:
        return self.grid.shape[0]

    @property
    def T(self) -> int:
        return self.grid.shape[1]


def write_mel(path, mel: MelFile):
    grid = np.ascontiguousarray(mel.grid, dtype="<f8")
    if not np.all(np.isfinite(grid)):
        raise MelFormatError("grid contains non-finite values")
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<IIIIdd", MEL_VERSION, grid.shape[0], grid.shape[1],
                            mel.sample_rate, mel.a, mel.b))
        f.write(grid.tobytes())


def read_mel(path) -> MelFile:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MEL_MAGIC:
        raise MelFormatError(f"bad magic {blob[:4]!r}")
    header = blob[4:4 + struct.calcsize("<IIIIdd")]
    if len(header) < struct.calcsize("<IIIIdd"):
        raise MelFormatError("truncated header")
    version, n_f, T, sr, a, b = struct.unpack("<IIIIdd", header)
    if version != MEL_VERSION:
        raise MelFormatError(f"unsupported version {version}")
    payload = blob[4 + len(header):]
    if len(payload) != n_f * T * 8:
        raise MelFormatError(
            f"payload length {len(payload)} != expected {n_f * T * 8}")
    grid = np.frombuffer(payload, dtype="<f8").reshape(n_f, T).copy()
    if not np.all(np.isfinite(grid)):
        raise MelFormatError("grid contains non-finite values")
    return MelFile(grid, sr, a, b)


def read_mel_csv(path) -> np.ndarray:
    """CSV alternative: n_f rows, T columns, decimal floats."""
    grid = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if not np.all(np.isfinite(grid)):
        raise MelFormatError("grid contains non-finite values")
    return grid


def write_mel_csv(path, grid: np.ndarray):
    np.savetxt(path, np.asarray(grid, dtype=np.float64), delimiter=",", fmt="%.17g")
