"""Counter-based seed derivation.

Every stochastic loop in the package (bootstrap replicates, per-subject
synthesis, per-epoch shuffling) derives its own generator from
``(seed, index)`` so results never depend on execution order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """One splitmix64 step from state ``seed + index * gamma``.

    ``derive_seed(0, 0)`` is the first output of a splitmix64 stream seeded
    with 0 (0xE220A8397B1DCDAF).
    """
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    state = (seed + index * GOLDEN_GAMMA + GOLDEN_GAMMA) & MASK64
    return splitmix64_mix(state)


def generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, index)))
