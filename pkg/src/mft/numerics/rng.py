"""Named random streams derived from one 64-bit seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "data", "dropout-none", "gradcheck")


def stream(seed: int, name: str, *sub: int | str) -> np.random.Generator:
    """Independent generator for ``name`` (and optional sub-keys) under ``seed``.

    The same (seed, name, sub) always yields the same stream; different names
    are statistically independent via SeedSequence spawning keys.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in 64 bits")
    key = [zlib.crc32(name.encode())]
    for s in sub:
        key.append(zlib.crc32(str(s).encode()))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))
