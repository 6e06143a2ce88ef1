"""Deterministic derivation of sub-seeds from a single root seed.

Every source of randomness in the package funnels through one integer
seed. Sub-streams are derived as ``SeedSequence([root, crc32(tag), ...])``
so that e.g. the epoch-7 shuffle or the frame-1234 radar sampling is a
pure function of (root seed, tags) and never depends on call order.
"""

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed_sequence(root_seed: int, *tags) -> np.random.SeedSequence:
    """SeedSequence for the sub-stream named by ``tags`` under ``root_seed``."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.SeedSequence(entropy)


def rng_for(root_seed: int, *tags) -> np.random.Generator:
    """Generator for the sub-stream named by ``tags`` under ``root_seed``."""
    return np.random.default_rng(derive_seed_sequence(root_seed, *tags))
