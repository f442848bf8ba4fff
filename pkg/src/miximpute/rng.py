"""Reproducible, splittable random streams.

A :class:`RngStream` is keyed by ``(seed, stream_id)``: the same pair always
reproduces the same draw sequence bit for bit, and distinct stream ids give
statistically independent sequences (numpy ``SeedSequence`` spawn keys over
PCG64).  Child streams extend the spawn key, so hierarchical consumers
(replication -> chain -> bootstrap replicate) never collide.

A stream is stateful: successive draws advance it.  One stream must not be
shared across concurrent callers; hand each worker its own child.
"""

from __future__ import annotations

import numpy as np

StreamKey = "int | tuple[int, ...]"


class RngStream:
    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id=0):
        self.seed = int(seed)
        if isinstance(stream_id, (int, np.integer)):
            self.stream_id = (int(stream_id),)
        else:
            self.stream_id = tuple(int(k) for k in stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def gen(self) -> np.random.Generator:
        """The live numpy generator backing this stream."""
        return self._gen

    def child(self, *key: int) -> "RngStream":
        """Independent stream derived by extending the spawn key."""
        if not key:
            raise ValueError("child() needs at least one key component")
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    def __repr__(self) -> str:
        sid = self.stream_id[0] if len(self.stream_id) == 1 else self.stream_id
        return f"RngStream(seed={self.seed}, stream_id={sid})"
