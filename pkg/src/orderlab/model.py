"""The compact bidirectional sequence network and its output heads.

forward maps (masked symbol grid, conditioning prior, mask) to per
(position, bin) output distributions for every position; the sampler
decides which positions to commit.  Two heads: plain categorical over Q
levels, and a discretized mixture of logistics with temperature
sampling.  Masked positions are zeroed at the input embedding, so their
stored symbols can never influence the output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .quantiser import QuantiserSpec, round_half_away

CATEGORICAL = "categorical"
LOGISTIC = "logistic"


class HeadMismatchError(TypeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    n_f: int
    Q: int
    width: int = 64
    layers: int = 2
    head: str = CATEGORICAL
    mixture_components: int = 5
    use_positions: bool = True
    # whether Gumbel-Max divides logits by t1 before adding noise
    gumbel_divide_logits: bool = True

    def __post_init__(self):
        if self.width < 1 or self.layers < 1 or self.mixture_components < 1:
            raise ValueError("width, layers and mixture components must be >= 1")
        if self.head not in (CATEGORICAL, LOGISTIC):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def head_out(self) -> int:
        if self.head == CATEGORICAL:
            return self.n_f * self.Q
        return self.n_f * 3 * self.mixture_components


def init_params(config: NetworkConfig, rng: np.random.Generator,
                scale: float = 0.02) -> dict[str, np.ndarray]:
    feat = config.n_f * config.Q + config.n_f + 1
    w = config.width
    p = {
        "in.W": rng.normal(0, scale, (feat, w)),
        "in.b": np.zeros(w),
    }
    for l in range(config.layers):
        for name in ("q", "k", "v", "o"):
            p[f"att{l}.{name}"] = rng.normal(0, scale, (w, w))
        p[f"mlp{l}.W1"] = rng.normal(0, scale, (w, 2 * w))
        p[f"mlp{l}.b1"] = np.zeros(2 * w)
        p[f"mlp{l}.W2"] = rng.normal(0, scale, (2 * w, w))
        p[f"mlp{l}.b2"] = np.zeros(w)
    p["head.W"] = rng.normal(0, scale, (w, config.head_out))
    p["head.b"] = np.zeros(config.head_out)
    return p


def positional_encoding(T: int, width: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(width)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / width)
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


@dataclass
class ModelOutput:
    head: str
    Q: int
    logits: Tensor = None        # categorical: (B, T, n_f, Q)
    mix_logits: Tensor = None    # logistic: (B, T, n_f, M)
    means: Tensor = None
    log_scales: Tensor = None

    @property
    def batch_shape(self):
        t = self.logits if self.head == CATEGORICAL else self.mix_logits
        return t.data.shape[:3]


def forward(config: NetworkConfig, params: dict, symbols: np.ndarray,
            mu: np.ndarray, mask: np.ndarray,
            pad_mask: np.ndarray | None = None) -> ModelOutput:
    """Run the network.

    symbols: (B, T, n_f) integer levels; mu: (B, n_f, T); mask: (B, T)
    with 1 marking decoded positions.  pad_mask, if given, is (B, T)
    with 1 marking real (non-padding) positions; padded positions are
    excluded from attention.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    mu = np.asarray(mu, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    B, T, n_f = symbols.shape
    if n_f != config.n_f:
        raise ad.ShapeError("forward/n_f", symbols.shape, (B, T, config.n_f))
    if mu.shape != (B, n_f, T):
        raise ad.ShapeError("forward/mu", mu.shape, (B, n_f, T))
    if mask.shape != (B, T):
        raise ad.ShapeError("forward/mask", mask.shape, (B, T))
    if symbols.min() < 0 or symbols.max() >= config.Q:
        raise ValueError("symbols out of range")

    params = {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}
    w = config.width

    # input features: mask-zeroed one-hot symbols, mu column, mask flag
    onehot = np.eye(config.Q)[symbols] * mask[:, :, None, None]
    feat = np.concatenate(
        [onehot.reshape(B, T, n_f * config.Q),
         np.transpose(mu, (0, 2, 1)),
         mask[:, :, None]], axis=-1)

    x = ad.matmul(Tensor(feat), params["in.W"]) + params["in.b"]
    if config.use_positions:
        x = x + Tensor(positional_encoding(T, w))

    att_bias = None
    if pad_mask is not None:
        att_bias = np.where(pad_mask[:, None, :] > 0, 0.0, -1e9)

    for l in range(config.layers):
        q = ad.matmul(x, params[f"att{l}.q"])
        k = ad.matmul(x, params[f"att{l}.k"])
        v = ad.matmul(x, params[f"att{l}.v"])
        scores = ad.matmul(q, ad.swap_last_axes(k)) * (1.0 / np.sqrt(w))
        if att_bias is not None:
            scores = scores + Tensor(att_bias)
        att = ad.matmul(ad.softmax(scores), v)
        x = x + ad.matmul(att, params[f"att{l}.o"])
        h = ad.tanh(ad.matmul(x, params[f"mlp{l}.W1"]) + params[f"mlp{l}.b1"])
        x = x + ad.matmul(h, params[f"mlp{l}.W2"]) + params[f"mlp{l}.b2"]

    out = ad.matmul(x, params["head.W"]) + params["head.b"]
    if config.head == CATEGORICAL:
        return ModelOutput(CATEGORICAL, config.Q,
                           logits=out.reshape((B, T, n_f, config.Q)))
    M = config.mixture_components
    mix = out.reshape((B, T, n_f, 3 * M))

    # split via constant selection matrices to keep the graph simple
    def _slice(lo, hi):
        sel = np.zeros((3 * M, hi - lo))
        sel[lo:hi] = np.eye(hi - lo)
        return ad.matmul(mix.reshape((B * T * n_f, 3 * M)), Tensor(sel)) \
                 .reshape((B, T, n_f, hi - lo))

    return ModelOutput(LOGISTIC, config.Q,
                       mix_logits=_slice(0, M),
                       means=_slice(M, 2 * M),
                       log_scales=_slice(2 * M, 3 * M))


# ---- likelihoods ---------------------------------------------------------

_MASS_FLOOR = 1e-300


def _logistic_log_mass(out: ModelOutput, levels: np.ndarray) -> Tensor:
    """Log mass of the discretized logistic mixture on integer levels.

    levels: integer array broadcastable against (B, T, n_f, M) after a
    trailing axis is added.  Buckets are (k-0.5, k+0.5) in level units,
    open-ended at 0 and Q-1.
    """
    k = levels[..., None].astype(np.float64)
    inv_scale = ad.exp(-out.log_scales)
    plus = (Tensor(k + 0.5) - out.means) * inv_scale
    minus = (Tensor(k - 0.5) - out.means) * inv_scale
    top = (k >= out.Q - 1).astype(np.float64)
    bottom = (k <= 0).astype(np.float64)
    cdf_plus = ad.sigmoid(plus) * Tensor(1.0 - top) + Tensor(top)
    cdf_minus = ad.sigmoid(minus) * Tensor(1.0 - bottom)
    mass = cdf_plus - cdf_minus
    log_mass = ad.log(mass + _MASS_FLOOR)
    return ad.logsumexp(ad.log_softmax(out.mix_logits) + log_mass)


def log_prob(out: ModelOutput, target: np.ndarray) -> Tensor:
    """Per (position, bin) log-probability of the target levels.

    target: (B, T, n_f) integers in {0..Q-1}; returns a (B, T, n_f) Tensor.
    """
    target = np.asarray(target, dtype=np.int64)
    if target.min() < 0 or target.max() >= out.Q:
        raise ValueError(f"target symbols outside [0, {out.Q - 1}]")
    if out.head == CATEGORICAL:
        return ad.gather_last(ad.log_softmax(out.logits), target)
    return _logistic_log_mass(out, target)


def full_log_table(out: ModelOutput) -> np.ndarray:
    """Log-probability of every level: plain (B, T, n_f, Q) numpy array."""
    if out.head == CATEGORICAL:
        x = out.logits.data
        m = x.max(axis=-1, keepdims=True)
        return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    B, T, n_f, M = out.mix_logits.data.shape
    table = np.empty((B, T, n_f, out.Q))
    for q in range(out.Q):
        levels = np.full((B, T, n_f), q)
        table[..., q] = _logistic_log_mass(out, levels).data
    return table


# ---- sampling ------------------------------------------------------------


def sample_head(out: ModelOutput, t1: float, t2: float,
                rng: np.random.Generator) -> np.ndarray:
    """Draw one level per (position, bin); returns (B, T, n_f) integers.

    Categorical: Gumbel-Max over Q at temperature t1 (t2 ignored).
    Logistic mixture: Gumbel-Max over components at t1, then
    value = mean + t2 * scale * logit(u), discretized and clamped.
    """
    if t1 <= 0:
        raise ValueError("t1 must be > 0")
    if t2 < 0:
        raise ValueError("t2 must be >= 0")
    if out.head == CATEGORICAL:
        logits = out.logits.data
        g = rng.gumbel(size=logits.shape)
        return np.argmax(logits / t1 + g, axis=-1).astype(np.int64)
    mix = out.mix_logits.data
    g = rng.gumbel(size=mix.shape)
    comp = np.argmax(mix / t1 + g, axis=-1)
    means = np.take_along_axis(out.means.data, comp[..., None], axis=-1)[..., 0]
    scales = np.exp(
        np.take_along_axis(out.log_scales.data, comp[..., None], axis=-1)[..., 0])
    u = rng.uniform(1e-12, 1 - 1e-12, size=means.shape)
    val = means + t2 * scales * np.log(u / (1 - u))
    return np.clip(round_half_away(val), 0, out.Q - 1).astype(np.int64)


def argmax_levels(out: ModelOutput) -> np.ndarray:
    """Most likely level per (position, bin): the top1 value rule."""
    return np.argmax(full_log_table(out), axis=-1).astype(np.int64)


# ---- network object and checkpoints -------------------------------------


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    qspec: QuantiserSpec
    seed: int = 0

    def forward(self, symbols, mu, mask, pad_mask=None) -> ModelOutput:
        return forward(self.config, self.params, symbols, mu, mask, pad_mask)

    def require_head(self, head: str):
        if self.config.head != head:
            raise HeadMismatchError(
                f"checkpoint has {self.config.head!r} head, {head!r} required")


CKPT_MAGIC = b"OLCK"
CKPT_VERSION = 1


def _config_text(net: Network) -> str:
    c = net.config
    lines = [
        f"n_f={c.n_f}", f"Q={c.Q}", f"width={c.width}", f"layers={c.layers}",
        f"head={c.head}", f"M={c.mixture_components}",
        f"use_positions={int(c.use_positions)}",
        f"gumbel_divide_logits={int(c.gumbel_divide_logits)}",
        f"quant_a={net.qspec.a!r}", f"quant_b={net.qspec.b!r}",
        f"quant_Q={net.qspec.Q}", f"seed={net.seed}",
    ]
    return "\n".join(lines)


def _parse_config_text(text: str):
    kv = dict(line.split("=", 1) for line in text.splitlines() if line)
    try:
        config = NetworkConfig(
            n_f=int(kv["n_f"]), Q=int(kv["Q"]), width=int(kv["width"]),
            layers=int(kv["layers"]), head=kv["head"],
            mixture_components=int(kv["M"]),
            use_positions=bool(int(kv["use_positions"])),
            gumbel_divide_logits=bool(int(kv["gumbel_divide_logits"])))
        qspec = QuantiserSpec(float(kv["quant_a"]), float(kv["quant_b"]),
                              int(kv["quant_Q"]))
        seed = int(kv["seed"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"bad config block: {e}") from e
    return config, qspec, seed


def save_checkpoint(path, net: Network):
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        cfg = _config_text(net).encode("utf-8")
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(net.params)))
        for name in sorted(net.params):
            arr = np.ascontiguousarray(net.params[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    view = memoryview(blob)
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[off:off + n]
        off += n
        return chunk

    if bytes(take(4)) != CKPT_MAGIC:
        raise CheckpointError("bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    (clen,) = struct.unpack("<I", take(4))
    config, qspec, seed = _parse_config_text(bytes(take(clen)).decode("utf-8"))
    (nparams,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(nparams):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
        params[name] = data
    net = Network(config, params, qspec, seed)
    expected = set(init_params(config, np.random.default_rng(0)))
    if set(params) != expected:
        raise CheckpointError("parameter names do not match config")
    return net
