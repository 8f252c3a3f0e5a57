"""Counter-addressed Gaussian noise.

Block ``c`` of the stream ``(seed, stream_id)`` is a pure function of the three
integers: it is read from a Philox generator keyed by ``(seed, stream_id)``
whose high counter word selects a chunk of consecutive blocks. Two sources with
the same key and counter therefore produce bit-identical draws, and replicas on
different ``stream_id`` values never share a key.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_CHUNK_VALUES = 1 << 18


def _chunk_rows(size):
    return max(1, min(1024, _CHUNK_VALUES // max(size, 1)))


class NoiseSource:
    """Standard normal blocks addressed by ``(seed, stream_id, counter)``."""

    __slots__ = ("seed", "stream_id", "counter", "_cache")

    def __init__(self, seed, stream_id=0, counter=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        self._cache = None

    def block(self, index, size):
        """Block ``index`` of ``size`` draws; does not move the counter."""
        rows = _chunk_rows(size)
        chunk, row = divmod(int(index), rows)
        cache = self._cache
        if cache is None or cache[0] != (size, chunk):
            bg = np.random.Philox(
                key=np.array([self.seed, self.stream_id], dtype=np.uint64),
                counter=np.array([0, 0, size, chunk], dtype=np.uint64),
            )
            data = np.random.Generator(bg).standard_normal((rows, size))
            data.setflags(write=False)
            cache = ((size, chunk), data)
            self._cache = cache
        return cache[1][row]

    def next(self, size):
        """Block at the current counter, then advance the counter by one."""
        out = self.block(self.counter, size)
        self.counter += 1
        return out

    def copy(self):
        return NoiseSource(self.seed, self.stream_id, self.counter)

    def spawn(self, stream_id):
        return NoiseSource(self.seed, stream_id, 0)

    def __repr__(self):
        return f"NoiseSource(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"
