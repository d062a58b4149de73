"""xoshiro256** pseudo-random generator.

Every random draw in the package (split shuffling, weight init, dropout
masks, batch order) goes through this generator so that runs are
reproducible bit-for-bit across platforms.
"""
import numpy as np
from numba import njit

_MASK = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _fill(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.shape[0]):
        out[i] = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


class Xoshiro256:
    """xoshiro256** with its 256-bit state expanded from an integer seed by splitmix64."""

    def __init__(self, seed):
        x = int(seed) & _MASK
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        self.state = np.array(words, dtype=np.uint64)

    def next_u64(self, n=None):
        out = np.empty(1 if n is None else int(n), dtype=np.uint64)
        _fill(self.state, out)
        return int(out[0]) if n is None else out

    def random(self, n=None):
        """Uniform doubles in [0, 1) built from the top 53 bits."""
        u = self.next_u64(1 if n is None else n)
        r = (u >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(r[0]) if n is None else r

    def uniform(self, low, high, shape):
        n = int(np.prod(shape)) if len(shape) else 1
        return (low + (high - low) * self.random(n)).reshape(shape)

    def below(self, bound):
        """Unbiased integer in [0, bound) via modulo with rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = _MASK - (_MASK % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a Python list; returns it."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n):
        return np.array(self.shuffle(list(range(n))), dtype=np.int64)

    def normal(self, shape):
        # Box-Muller on pairs of uniforms
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)
