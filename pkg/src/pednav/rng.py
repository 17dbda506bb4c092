"""Seed plumbing: one global seed fans out into named independent substreams."""

import zlib

import numpy as np


def substream(root_seed: int, *names) -> np.random.Generator:
    """Independent generator for (root_seed, *names).

    Stable across runs, platforms, and process boundaries: names are hashed
    with crc32, so no reliance on Python's randomized str hash.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    entropy += [zlib.crc32(str(n).encode("utf8")) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(root_seed: int, *names) -> int:
    """A plain 63-bit integer seed for components that take one (kernels, hashes)."""
    return int(substream(root_seed, *names).integers(0, 2**63 - 1))
