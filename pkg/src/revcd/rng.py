"""Counter-based seeded random sampling.

Every draw spins up a fresh Philox generator keyed on (seed, counter) and
then bumps the counter, so any draw can be replayed exactly from the pair
alone. The pair is what gets checkpointed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass
class RngState:
    """Replayable RNG: identical (seed, counter) gives identical draws."""

    seed: int
    counter: int = 0

    def _next_generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.counter & _MASK64],
                       dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        """i.i.d. standard normal draws."""
        return self._next_generator().standard_normal(shape).astype(dtype)

    def uniform(self, shape, dtype=np.float64) -> np.ndarray:
        return self._next_generator().random(shape).astype(dtype)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        return self._next_generator().integers(low, high, size=shape,
                                               endpoint=True, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def spawn(self, stream: int) -> "RngState":
        """Derive an independent stream (fresh seed, zero counter)."""
        key = np.array([self.seed & _MASK64, (0xD1F5 + stream) & _MASK64],
                       dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        return RngState(seed=int(gen.integers(0, _MASK64, dtype=np.uint64)))

    def state(self) -> dict:
        return {"seed": int(self.seed), "counter": int(self.counter)}

    @classmethod
    def from_state(cls, state: dict) -> "RngState":
        return cls(seed=int(state["seed"]), counter=int(state["counter"]))


def dropout_mask(shape, p: float, rng: RngState, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask with values in {0, 1/(1-p)}; expectation 1."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = (rng.uniform(shape) >= p).astype(dtype)
    return keep / np.asarray(1.0 - p, dtype=dtype)
