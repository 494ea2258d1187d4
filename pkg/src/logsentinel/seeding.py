"""Named random substreams derived from one per-run seed."""

import zlib

import numpy as np

STREAMS = ("init", "shuffle", "masking", "synth", "detect")


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name, extra) => same stream."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *(int(e) & 0xFFFFFFFF for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


def text_key(text: str) -> int:
    return zlib.crc32(text.encode())
