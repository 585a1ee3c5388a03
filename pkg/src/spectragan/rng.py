"""Deterministic, serializable random number generation.

Counter-style splitmix64: the 64-bit state advances by a fixed odd
constant per draw and outputs come from a bijective mixing function.
The entire generator state is a single u64 (trivial to checkpoint) and
any number of draws can be produced as one vectorized numpy batch.
"""

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """splitmix64 stream; ``state`` is the full serializable state."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self, n):
        """Draw ``n`` raw 64-bit words as a uint64 array."""
        with np.errstate(over="ignore"):
            ks = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            out = _mix(np.uint64(self.state) + ks)
        self.state = (self.state + _GAMMA * n) & _MASK
        return out

    def uniform(self, n):
        """``n`` doubles in [0, 1) with 53-bit resolution."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape):
        """Standard normal draws via Box-Muller (both halves used)."""
        n = int(np.prod(shape)) if shape else 1
        if n == 0:
            return np.zeros(shape)
        k = (n + 1) // 2
        # u1 in (0, 1] keeps the log finite
        u1 = ((self.next_u64(k) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = self.uniform(k)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * k)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n].reshape(shape)

    def randint(self, n):
        """One integer in [0, n)."""
        return min(int(self.uniform(1)[0] * n), n - 1)

    def permutation(self, n):
        """Deterministic random permutation of range(n)."""
        return np.argsort(self.next_u64(n), kind="stable")
