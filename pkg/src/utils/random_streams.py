"""
Seeded random streams

Every stochastic step draws from numpy's PCG64 generator. Sub-streams are derived from
the master seed by hashing (seed, stage, key...) with BLAKE2b, so a stream depends only
on the identifiers it is keyed by and never on execution order or worker count.
"""

import hashlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator]


def derive_seed(seed: int, stage: str, *keys: object) -> int:
    """
    Derive a 64-bit sub-seed

    Args:
        seed: Master seed
        stage: Pipeline stage name ("psu", "ssu", "replicate", ...)
        keys: Stratum, sub-stratum, PSU or replicate identifiers

    Returns:
        Unsigned 64-bit integer
    """
    text = "\x1f".join([str(int(seed)), stage, *(str(k) for k in keys)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    """Generator seeded directly with ``seed``"""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed: int, stage: str, *keys: object) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, stage, keys)"""
    return make_rng(derive_seed(seed, stage, *keys))


def as_rng(seed: SeedLike) -> np.random.Generator:
    """Accept either a seed or an existing generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)
