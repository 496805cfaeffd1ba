import numpy as np
import pytest

from orderlab.model import (CATEGORICAL, Network, NetworkConfig, init_params)
from orderlab.quantiser import QuantiserSpec
from orderlab.rng import make_rng


def tiny_network(n_f=1, Q=3, width=12, layers=1, head=CATEGORICAL, M=2,
                 use_positions=True, seed=0, a=0.1, b=1.0) -> Network:
    config = NetworkConfig(n_f=n_f, Q=Q, width=width, layers=layers, head=head,
                           mixture_components=M, use_positions=use_positions)
    params = init_params(config, make_rng(seed, "init"))
    return Network(config, params, QuantiserSpec(a, b, Q), seed)


def iid_network(marginal, n_f=1, a=0.1, b=1.0) -> Network:
    """A network whose categorical output equals the given marginal at
    every position and bin, regardless of input: all weights zero, head
    bias = tiled log-marginal."""
    marginal = np.asarray(marginal, dtype=np.float64)
    Q = len(marginal)
    net = tiny_network(n_f=n_f, Q=Q, a=a, b=b)
    params = {k: np.zeros_like(v) for k, v in net.params.items()}
    params["head.b"] = np.tile(np.log(marginal), n_f)
    return Network(net.config, params, net.qspec, net.seed)


def finite_diff(f, params: dict, name, idx, h=1e-5):
    p2 = {k: v.copy() for k, v in params.items()}
    p2[name][idx] += h
    fp = f(p2)
    p2[name][idx] -= 2 * h
    fm = f(p2)
    return (fp - fm) / (2 * h)


@pytest.fixture
def rng():
    return make_rng(1234)
