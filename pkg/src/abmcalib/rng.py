"""Deterministic seed derivation helpers.

Every stochastic component takes an explicit 64-bit seed and owns a private
``numpy.random.Generator``.  Child seeds are derived with splitmix64 so that
replication r, trial k, candidate i, ... each get decorrelated streams that
are reproducible regardless of execution order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One splitmix64 output step for the 64-bit state ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def replication_seed(master_seed: int, replication: int) -> int:
    """Seed for the r-th replication: ``master XOR splitmix64(r)``."""
    return (master_seed & _MASK64) ^ splitmix64(replication & _MASK64)


def child_seed(seed: int, *indices: int) -> int:
    """Derive a decorrelated child seed from ``seed`` and an index path."""
    out = seed & _MASK64
    for idx in indices:
        out = splitmix64(out ^ splitmix64((idx + 1) & _MASK64))
    return out


def make_rng(seed: int, *indices: int) -> np.random.Generator:
    """A fresh PCG64 generator for ``seed`` (optionally a child stream)."""
    if indices:
        seed = child_seed(seed, *indices)
    return np.random.Generator(np.random.PCG64(seed & _MASK64))
