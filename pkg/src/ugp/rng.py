"""Deterministic, counter-based random streams.

Every stochastic choice in the engine draws from a stream keyed by a seed
derived from (master seed, purpose strings). Streams never share mutable
state, so concurrency and call-order changes elsewhere cannot perturb a
given stream.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def derive_seed(*parts) -> int:
    """Hash ints and strings into a stable 64-bit stream seed."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        elif isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        else:
            raise TypeError(f"seed parts must be int or str, got {type(part)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def _mix(x: int) -> int:
    # SplitMix64 finalizer
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class CounterRng:
    """SplitMix64-style generator addressed by (seed, counter).

    State is two integers; the value at a given counter depends only on the
    seed, so a fixed number of draws always reproduces bit-identically.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK64
        self.counter = counter

    def next_u64(self) -> int:
        self.counter += 1
        return _mix((self.seed + self.counter * _GOLDEN) & _MASK64)

    def uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is negligible for small n."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return self.next_u64() % n

    def choice_weighted(self, probs) -> int:
        """Sample an index from a probability vector by inverse CDF."""
        u = self.uniform()
        acc = 0.0
        last = 0
        for i, p in enumerate(probs):
            acc += p
            last = i
            if u < acc:
                return i
        return last


def philox(seed: int) -> np.random.Generator:
    """Counter-based numpy generator for bulk draws (parameter init)."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))
