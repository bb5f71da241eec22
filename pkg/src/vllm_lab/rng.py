"""Seeded pseudo-random number generator used everywhere in this package.

The generator is fully specified here so that any implementation, in any
language, produces the same streams from the same seed:

* State: xoshiro256** (Blackman & Vigna), four 64-bit words.
* Seeding: the four state words are the first four outputs of SplitMix64
  initialised with ``(seed + stream * 0x9E3779B97F4A7C15) mod 2**64``.
  ``stream`` selects an independent substream (dataset, init, training, ...).
  If all four words come out zero, word 0 is set to 0x9E3779B97F4A7C15.
* ``random()``: take the top 53 bits of the next output,
  ``(u >> 11) * 2**-53``, giving a float in [0, 1).
* ``randrange(n)``: rejection sampling -- draw 64-bit words until
  ``u < 2**64 - (2**64 % n)``, then return ``u % n`` (no modulo bias).
* ``normal()``: Box-Muller. Draw u1, u2 with ``random()``; with
  ``a = 1 - u1`` (so a is in (0, 1]) and ``r = sqrt(-2 ln a)`` the pair is
  ``(r cos(2 pi u2), r sin(2 pi u2))``. The first value is returned, the
  second is cached and returned by the following call.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Prng:
    """xoshiro256** generator with SplitMix64 seeding (see module docstring)."""

    __slots__ = ("_s", "_spare")

    def __init__(self, seed: int, stream: int = 0):
        sm = (int(seed) + int(stream) * _GOLDEN) & _MASK
        s = []
        for _ in range(4):
            sm, word = _splitmix64(sm)
            s.append(word)
        if not any(s):
            s[0] = _GOLDEN
        self._s = s
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        a = 1.0 - self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(a))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        return out

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.random()
        return out

    def get_state(self) -> tuple:
        return (tuple(self._s), self._spare)

    def set_state(self, state: tuple) -> None:
        words, spare = state
        if len(words) != 4:
            raise ValueError("state must hold four 64-bit words")
        self._s = [int(w) & _MASK for w in words]
        self._spare = None if spare is None else float(spare)
