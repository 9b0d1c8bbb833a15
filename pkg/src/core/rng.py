"""
Seeded random streams.

Every stochastic operation receives an explicit integer seed. Child streams
are derived from (seed, *keys) through numpy's SeedSequence so that results
do not depend on the order in which tasks, trials or threads are scheduled.
"""

import hashlib
from typing import List, Union

import numpy as np

Key = Union[int, str]


def _encode_key(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _entropy(seed: int, keys: tuple) -> List[int]:
    return [_encode_key(seed)] + [_encode_key(k) for k in keys]


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_encode_key(seed))))


def split_rng(seed: int, *keys: Key) -> np.random.Generator:
    """
    Derive an independent generator for a named purpose.

    Args:
        seed: Root experiment seed.
        *keys: Purpose labels and indices, e.g. ("partition", step, task).

    Returns:
        Generator whose stream depends only on (seed, keys).
    """
    sequence = np.random.SeedSequence(_entropy(seed, keys))
    return np.random.Generator(np.random.PCG64(sequence))


def child_seed(seed: int, *keys: Key) -> int:
    """Derive a 63-bit integer seed, for APIs that take plain seeds."""
    sequence = np.random.SeedSequence(_entropy(seed, keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
