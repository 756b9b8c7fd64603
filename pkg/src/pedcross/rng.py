"""Deterministic named random streams.

Every stochastic component draws from a counter-based Philox generator whose
128-bit key is derived from (seed, stream name parts) via SHA-256. Streams
with different names never collide, results are identical across platforms,
and child streams can be derived without consuming parent state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *names) -> int:
    """Derive a 128-bit Philox key from a base seed and name parts."""
    tag = "/".join(str(n) for n in names)
    digest = hashlib.sha256(f"{seed:#x}|{tag}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def named_stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for the stream identified by ``names``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *names)))
