"""Counter-based random streams keyed by (seed, agent, iteration).

Every draw in the simulator is addressed rather than consumed: the words used
by agent ``k`` at iteration ``i`` are a pure function of ``(seed, stream, k, i)``.
This makes runs reproducible regardless of the order (or process) in which
agents are evaluated, and lets blocks of iterations be generated in one call.
"""

from __future__ import annotations

import threading
from collections import OrderedDict

import numpy as np
from scipy.special import ndtri

__all__ = ["KeyedStream", "uniforms", "normals", "STREAM_NOISE", "STREAM_SAMPLER"]

STREAM_NOISE = 1
STREAM_SAMPLER = 2

_WORDS_PER_BLOCK = 4
_CHUNK = 128
_CACHE_SIZE = 512


def uniforms(words: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to uniforms strictly inside (0, 1)."""
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(words: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to standard normals (one word per variate)."""
    return ndtri(uniforms(words))


class KeyedStream:
    """Fixed-width word blocks for each (agent, iteration) of one seed.

    Parameters
    ----------
    seed : int
        Non-negative run seed (< 2**64).
    width : int
        Number of 64-bit words reserved per (agent, iteration).
    stream : int
        Tag separating independent uses of the same seed.
    """

    def __init__(self, seed: int, width: int, stream: int = STREAM_NOISE):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be in [0, 2**64), got {seed}")
        if width < 1:
            raise ValueError("width must be positive")
        self.seed = int(seed)
        self.stream = int(stream)
        self.width = int(width)
        self._blocks = -(-self.width // _WORDS_PER_BLOCK)
        self._cache: OrderedDict[tuple[int, int], np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def _generate(self, agent: int, start: int, count: int) -> np.ndarray:
        counter = (self.stream << 192) + start * self._blocks
        bitgen = np.random.Philox(key=(self.seed << 64) | int(agent), counter=counter)
        raw = bitgen.random_raw(count * self._blocks * _WORDS_PER_BLOCK)
        return raw.reshape(count, -1)[:, : self.width]

    def block(self, agent: int, start: int, count: int) -> np.ndarray:
        """Words for iterations ``start .. start+count-1`` of ``agent``, shape (count, width)."""
        if agent < 0 or start < 0:
            raise ValueError("agent and iteration must be non-negative")
        return self._generate(agent, start, count)

    def words(self, agent: int, iteration: int) -> np.ndarray:
        """Words for a single (agent, iteration), served from a chunk cache."""
        if agent < 0 or iteration < 0:
            raise ValueError("agent and iteration must be non-negative")
        key = (int(agent), iteration // _CHUNK)
        with self._lock:
            chunk = self._cache.get(key)
            if chunk is None:
                chunk = self._generate(agent, key[1] * _CHUNK, _CHUNK)
                self._cache[key] = chunk
                if len(self._cache) > _CACHE_SIZE:
                    self._cache.popitem(last=False)
        return chunk[iteration % _CHUNK]
