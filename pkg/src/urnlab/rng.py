"""Deterministic random streams with keyed substream derivation.

Streams are backed by the counter-based Philox generator.  A substream is
addressed by the parent seed plus a tuple of integer ids, so replicate k of
an ensemble consumes exactly the same numbers no matter which worker runs
it or in what order replicates are scheduled.
"""

from __future__ import annotations

import numpy as np


class RandomStream:
    """A Philox-backed stream identified by ``(seed, key)``.

    The stream is stateful (each draw advances it) but its identity is the
    pure value ``(seed, key)``: two streams built from the same pair produce
    identical sequences.
    """

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key})"

    def substream(self, *ids: int) -> "RandomStream":
        """Derive an independent stream keyed by ``ids`` under this one."""
        return RandomStream(self.seed, self.key + tuple(int(i) for i in ids))

    # scalar draws -------------------------------------------------------

    def uniform(self) -> float:
        """One float in [0, 1)."""
        return float(self._gen.random())

    def integers(self, low: int, high: int) -> int:
        """One integer in [low, high], both ends inclusive."""
        return int(self._gen.integers(low, high + 1))

    def binomial(self, trials: int, p: float) -> int:
        return int(self._gen.binomial(trials, p))

    def poisson(self, rate: float) -> int:
        return int(self._gen.poisson(rate))

    # vector draws (same stream, used for bulk sampling in tests/tools) --

    def uniform_array(self, size: int) -> np.ndarray:
        return self._gen.random(size)

    def integers_array(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high + 1, size=size, dtype=np.int64)

    def binomial_array(self, trials: int, p: float, size: int) -> np.ndarray:
        return self._gen.binomial(trials, p, size=size).astype(np.int64)

    def poisson_array(self, rate: float, size: int) -> np.ndarray:
        return self._gen.poisson(rate, size=size).astype(np.int64)
