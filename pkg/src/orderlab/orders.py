"""Decoding orders: uniform, fixed l2r/r2l, and swap-randomised.

An Order maps step t to the sequence position decoded at that step.
Internally positions are 0-based; serialisation is 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Order:
    perm: np.ndarray  # perm[t] = position decoded at step t, 0-based
    provenance: str = "unknown"

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", p)
        if sorted(p.tolist()) != list(range(len(p))):
            raise ValueError(f"not a permutation of 0..{len(p) - 1}: {p.tolist()}")

    @property
    def T(self) -> int:
        return len(self.perm)

    def inverse(self) -> np.ndarray:
        """inv[i] = step at which position i is decoded."""
        inv = np.empty(self.T, dtype=np.int64)
        inv[self.perm] = np.arange(self.T)
        return inv

    def to_list_1based(self) -> list[int]:
        return [int(p) + 1 for p in self.perm]

    @classmethod
    def from_list_1based(cls, xs, provenance="unknown") -> "Order":
        return cls(np.asarray(xs, dtype=np.int64) - 1, provenance)


def uniform_order(T: int, rng: np.random.Generator) -> Order:
    """Fisher-Yates shuffle of the identity; every permutation equally likely."""
    if T < 1:
        raise ValueError("T must be >= 1")
    perm = np.arange(T, dtype=np.int64)
    for i in range(T - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return Order(perm, "uniform")


def fixed_order(T: int, direction: str) -> Order:
    if T < 1:
        raise ValueError("T must be >= 1")
    if direction == "l2r":
        return Order(np.arange(T, dtype=np.int64), "l2r")
    if direction == "r2l":
        return Order(np.arange(T - 1, -1, -1, dtype=np.int64), "r2l")
    raise ValueError(f"unknown direction {direction!r}")


def n_swaps(T: int, beta: float, log_base: str = "ln") -> int:
    """Swap count round(beta * T * log T), ties away from zero."""
    if log_base == "ln":
        lg = np.log(T)
    elif log_base == "log2":
        lg = np.log2(T)
    else:
        raise ValueError(f"unknown log base {log_base!r}")
    x = beta * T * lg
    return int(np.sign(x) * np.floor(np.abs(x) + 0.5))


def beta_swapped_order(T: int, beta: float, rng: np.random.Generator,
                       log_base: str = "ln") -> Order:
    """Identity perturbed by random transpositions, endpoints drawn with
    replacement (equal endpoints count as a no-op swap)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    perm = np.arange(T, dtype=np.int64)
    for _ in range(n_swaps(T, beta, log_base)):
        i = int(rng.integers(0, T))
        j = int(rng.integers(0, T))
        perm[i], perm[j] = perm[j], perm[i]
    return Order(perm, f"beta({beta})")


def kendall_tau_distance(o1: Order, o2: Order) -> int:
    """Number of discordant pairs between two orders, O(T log T)."""
    if o1.T != o2.T:
        raise ValueError(f"length mismatch: {o1.T} vs {o2.T}")
    # rank o1's steps in o2's step coordinates, then count inversions
    inv2 = o2.inverse()
    seq = inv2[o1.perm]
    return _count_inversions(list(seq))


def _count_inversions(seq: list[int]) -> int:
    if len(seq) < 2:
        return 0
    mid = len(seq) // 2
    left, right = seq[:mid], seq[mid:]
    count = _count_inversions(left) + _count_inversions(right)
    merged, i, j = [], 0, 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
            count += len(left) - i
    seq[:] = merged + left[i:] + right[j:]
    return count
