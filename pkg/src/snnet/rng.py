"""Deterministic random streams derived from one top-level seed.

Every stochastic component (generator, init, shuffle, dropout, augmentation,
sub-sampling) pulls an independent generator via `substream`, so components
reproduce individually and pipelining cannot reorder draws.
"""

import zlib

import numpy as np


def _key_word(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def substream(seed, *keys):
    """Independent PCG64 generator for (seed, *keys); stable across runs."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_word(k) for k in keys]
    return np.random.default_rng(words)
