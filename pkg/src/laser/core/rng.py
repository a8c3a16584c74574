"""Seeded random streams.

:class:`SeededRng` wraps numpy's PCG64 bit generator. Uniform doubles come
from ``Generator.random`` (53-bit mantissa construction, identical on every
platform for a given seed); normal draws are produced from pairs of uniforms
by the Box-Muller transform

    z0 = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
    z1 = sqrt(-2 ln(1 - u1)) * sin(2 pi u2)

with ``u1, u2`` consecutive uniforms. All ``z0`` values fill the first half of
the flattened output and all ``z1`` values the second half. Using ``1 - u1``
keeps the logarithm argument in ``(0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM_ID = "pcg64+box-muller"


@dataclass
class SeededRng:
    seed: int
    algorithm_id: str = field(default=ALGORITHM_ID, init=False)

    def __post_init__(self) -> None:
        self._gen = np.random.Generator(np.random.PCG64(int(self.seed)))

    def uniform(self, shape) -> np.ndarray:
        """Uniform doubles on ``[0, 1)``."""
        return self._gen.random(shape)

    def bernoulli(self, p, shape) -> np.ndarray:
        return (self.uniform(shape) < p).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by the uniform stream, so it only depends on it.
        idx = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def spawn(self, key: int) -> "SeededRng":
        """Independent child stream derived deterministically from this seed."""
        seq = np.random.SeedSequence([int(self.seed), int(key)])
        return SeededRng(int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))


def sample_standard_normal(rng: SeededRng, shape) -> np.ndarray:
    """I.i.d. N(0, 1) draws of the given shape via Box-Muller."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    size = int(np.prod(shape, dtype=np.int64))
    half = (size + 1) // 2
    u = rng.uniform((2, half))
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:size].reshape(shape)
