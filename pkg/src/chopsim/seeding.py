"""Counter-based seed derivation for reproducible, order-independent RNG streams."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed keyed on ``(seed, *keys)``.

    Each key step is ``splitmix64(parent + (key + 1) * gamma)``; because the
    finalizer is a bijection on 64-bit words and gamma is odd, distinct keys
    under one parent give distinct children.
    """
    s = splitmix64(seed & _MASK64)
    for k in keys:
        s = splitmix64((s + ((k + 1) * _GAMMA)) & _MASK64)
    return s


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
