"""
This module provides the documented pseudorandom stream behind every seeded
quantity of the package (network weights and initial noise).

The stream is SplitMix64: the k-th 64-bit output (k = 1, 2, ...) mixes the
state ``seed + k * 0x9E3779B97F4A7C15 (mod 2**64)``. Uniforms take the top
53 bits, ``u = (x >> 11) * 2**-53``; normals come from Box-Muller on
consecutive uniform pairs, ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``. The
stream depends on nothing but integer arithmetic and ``log``/``cos``, so it
does not move with numpy's own generator versions.

Classes
-------
SeededStream
    A stateful cursor over the stream of one seed.
"""

import numpy as np


GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_2 = np.uint64(0x94D049BB133111EB)
SEED_MASK = (1 << 64) - 1


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Returns outputs ``start + 1 .. start + count`` of the stream of ``seed``."""
    steps = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    state = steps * GOLDEN_GAMMA + np.uint64(seed & SEED_MASK)
    state = (state ^ (state >> np.uint64(30))) * MIX_1
    state = (state ^ (state >> np.uint64(27))) * MIX_2
    return state ^ (state >> np.uint64(31))


class SeededStream:
    def __init__(self, seed: int) -> None:
        self.seed = seed
        self.position = 0

    def uniform(self, count: int) -> np.ndarray:
        """Draws ``count`` uniforms in ``[0, 1)``."""
        raw = splitmix64(self.seed, self.position, count)
        self.position += count
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape: tuple[int, ...]) -> np.ndarray:
        """Draws standard normals with the given shape."""
        count = int(np.prod(shape, dtype=np.int64))
        pairs = self.uniform(2 * count).reshape(count, 2)
        radius = np.sqrt(-2.0 * np.log1p(-pairs[:, 0]))
        values = radius * np.cos(2.0 * np.pi * pairs[:, 1])
        return values.reshape(shape)
