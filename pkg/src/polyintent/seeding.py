"""Named, reproducible RNG substreams.

Every random decision in the library flows from one integer seed plus a
tuple of stream tags (e.g. ``rng_for(seed, "shuffle", epoch)``), so a single
seed pins the whole pipeline while distinct stages stay statistically
independent.
"""

import zlib

import numpy as np

from .errors import ValidationError


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Return a Generator keyed by ``seed`` and a stable hash of ``tags``."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"seed must be a non-negative integer, got {seed!r}")
    entropy = [int(seed)]
    entropy.extend(zlib.crc32(str(tag).encode("utf-8")) for tag in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy))
