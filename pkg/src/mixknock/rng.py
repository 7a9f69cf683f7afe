"""Seeded, splittable random streams.

Every random draw in the package goes through a :class:`SeededStream`. A
stream is identified by ``(seed, stream_id)`` plus an optional ``path`` of
child indices, and maps onto a numpy ``SeedSequence`` spawn key feeding a
Philox counter-based bit generator.  Numpy documents that distinct spawn keys
under one entropy value give independent streams, which is what lets
replicate ``r`` / knockoff draw ``b`` run anywhere (any process, any order)
and still produce identical numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DRAW_BITS = 20

_MASK64 = (1 << 64) - 1


def stream_id_for(replicate: int, draw: int = 0) -> int:
    """Stream id convention ``replicate * 2**20 + draw``."""
    if not 0 <= draw < (1 << DRAW_BITS):
        raise ValueError(f"draw index {draw} out of range")
    return (int(replicate) << DRAW_BITS) + int(draw)


@dataclass(frozen=True)
class SeededStream:
    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def child(self, index: int) -> "SeededStream":
        """Independent sub-stream; ``child(i)`` is stable across runs."""
        return SeededStream(self.seed, self.stream_id, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream.

        Calling twice returns two generators yielding the same sequence.
        """
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.Philox(ss))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stream_id": self.stream_id, "path": list(self.path)}
