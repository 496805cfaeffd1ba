"""Linear scalar quantisation shared across all frequency bins.

A real grid over [a, b] maps to integer levels {0..Q-1} via
round((clamp(y) - a) / (b - a) * (Q - 1)), with ties rounded half away
from zero, and back via the affine inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SymbolRangeError(ValueError):
    pass


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (numpy rounds to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantiserSpec:
    a: float
    b: float
    Q: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"require a < b, got a={self.a}, b={self.b}")
        if self.Q < 2:
            raise ValueError(f"require Q >= 2, got Q={self.Q}")


def quantise(spec: QuantiserSpec, y: np.ndarray) -> np.ndarray:
    """Map reals to levels; out-of-range values are clamped to [a, b] first."""
    y = np.clip(np.asarray(y, dtype=np.float64), spec.a, spec.b)
    s = round_half_away((y - spec.a) / (spec.b - spec.a) * (spec.Q - 1))
    return s.astype(np.int64)


def dequantise(spec: QuantiserSpec, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    if s.size and (s.min() < 0 or s.max() > spec.Q - 1):
        raise SymbolRangeError(
            f"symbols outside [0, {spec.Q - 1}]: min={s.min()}, max={s.max()}")
    return spec.a + s.astype(np.float64) / (spec.Q - 1) * (spec.b - spec.a)


def spec_from_data(y: np.ndarray, Q: int) -> QuantiserSpec:
    """Per-dataset bounds: min/max over the given values."""
    y = np.asarray(y, dtype=np.float64)
    a, b = float(y.min()), float(y.max())
    if a == b:
        b = a + 1.0
    return QuantiserSpec(a, b, Q)
