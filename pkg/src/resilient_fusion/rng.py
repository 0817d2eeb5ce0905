"""Seedable, portable random number generator used by the simulator.

Golden scenario files must regenerate byte-identically on any platform and
any numpy version, so the simulator does not rely on numpy's Generator
streams (their bit streams are only guaranteed stable within one numpy
release).  Instead this module implements splitmix64, a tiny counter-based
generator with a fixed published algorithm, vectorized over numpy uint64
arrays.  Normal variates come from the Box-Muller transform applied to
splitmix64 uniforms, so every draw is a pure function of (seed, counter).
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 output function; uint64 arithmetic wraps mod 2**64,
    # which numpy flags as overflow for scalars -- that wrap is the point
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags: int) -> int:
    """Derive an independent stream seed from a base seed and integer tags."""
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for tag in tags:
            z = _mix((z + _GOLDEN) ^ np.uint64(tag & 0xFFFFFFFFFFFFFFFF))
    return int(z)


class PortableRng:
    """Counter-based splitmix64 stream. Stateful but reproducible: the n-th
    draw after construction depends only on (seed, n)."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._seed + (idx + np.uint64(1)) * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in [0, 1) with 53-bit resolution."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) / _U53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal variates (Box-Muller)."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # guard log(0); 2**-54 keeps the argument strictly positive
        r = np.sqrt(-2.0 * np.log(u1 + 2.0 ** -54))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def normal3(self, n: int) -> np.ndarray:
        """(n, 3) array of standard normals."""
        return self.normal(3 * n).reshape(n, 3)
