"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by the
master seed plus an integer path (sampler tag, trajectory id, scale index...).
Streams are therefore independent of the order in which they are requested.
"""
from __future__ import annotations

import zlib

import numpy as np

_TAGS: dict[str, int] = {}


def tag(name: str) -> int:
    """Stable 32-bit integer for a stream label."""
    if name not in _TAGS:
        _TAGS[name] = zlib.crc32(name.encode())
    return _TAGS[name]


def stream(seed: int, *key: int | str) -> np.random.Generator:
    if seed is None:
        raise ValueError("a master seed is required")
    path = tuple(tag(k) if isinstance(k, str) else int(k) for k in key)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=path)
    return np.random.Generator(np.random.Philox(ss))
