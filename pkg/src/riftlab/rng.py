"""Seeded random streams.

All randomness flows through Philox (a counter-based 64-bit generator).
Child streams are derived with :class:`numpy.random.SeedSequence` spawn keys,
so stream ``i`` of master seed ``m`` is ``Philox(SeedSequence(m, spawn_key=(i,)))``.
The SeedSequence hash plays the role of ``hash64(master, i)``.
"""

from __future__ import annotations

import numpy as np


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and an optional stream path."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *stream: int) -> int:
    """64-bit integer seed derived from ``seed`` and ``stream``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
