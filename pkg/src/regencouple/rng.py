"""Counter-derived random streams.

A stream is addressed by ``(seed, *key)``; the key is folded into the
``spawn_key`` of a :class:`numpy.random.SeedSequence` and drives a Philox
counter-based generator.  Streams with distinct keys are independent, and
the stream for a given replicate does not depend on how many other
replicates exist or on which thread runs it.
"""

from __future__ import annotations

import zlib

import numpy as np

MAX_SEED = 2**64 - 1


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream key components must be non-negative")
    return part


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator addressed by ``seed`` and ``key``.

    Key components may be non-negative ints or short strings (hashed with
    CRC32).
    """
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
