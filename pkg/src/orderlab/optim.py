"""Bias-corrected Adam over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(ValueError):
    def __init__(self, name: str):
        self.param_name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam update; returns new params, mutates state in place."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        np.copyto(m, state.beta1 * m + (1 - state.beta1) * g)
        np.copyto(v, state.beta2 * v + (1 - state.beta2) * g * g)
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out
