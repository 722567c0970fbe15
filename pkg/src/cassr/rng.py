"""Counter-based deterministic random number generation.

The generator is the splitmix64 finalizer applied to a 64-bit counter
stream:

    u_i = mix64(key + (counter + i) * GOLDEN)

where ``mix64`` is the splitmix64 avalanche function (Steele, Lea &
Flood, 2014) and GOLDEN = 0x9E3779B97F4A7C15.  Uniform doubles come from
the top 53 bits (``u >> 11`` scaled by 2**-53); normal draws use the
Box-Muller transform on consecutive uniform pairs.  Everything is plain
64-bit integer arithmetic, so streams are reproducible bit-for-bit
across machines and are trivially vectorized / parallelized by counter
splitting.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    """splitmix64 finalizer; accepts uint64 scalars or arrays."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def derive_seed(master_seed: int, index: int) -> int:
    """Per-item seed: mix64(master + (index+1)*GOLDEN).

    This is the documented hash used to fan a master seed out across
    corpus items, batches and sampling runs.
    """
    with np.errstate(over="ignore"):
        z = np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF) + np.uint64(
            (index + 1) & 0xFFFFFFFFFFFFFFFF
        ) * GOLDEN
    return int(mix64(z))


class Rng:
    """Seeded counter-based stream of uniforms / normals / integers."""

    def __init__(self, seed: int, stream: int = 0):
        self.key = mix64(
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
            ^ mix64(np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
        )
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(self.key + idx * GOLDEN)

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform doubles in [lo, hi) from the top 53 bits of each word."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        out = lo + (hi - lo) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))  # 1-u1 keeps log away from 0
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def randint(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Integers in [lo, hi) by modulo reduction (bias < 2**-32 here)."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        n = int(np.prod(shape)) if shape else 1
        v = (self._raw(n) % np.uint64(hi - lo)).astype(np.int64) + lo
        return v.reshape(shape) if shape else int(v[0])

    def choice(self, seq):
        return seq[self.randint(0, len(seq))]
