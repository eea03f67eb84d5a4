"""Named RNG substreams.

Every random draw in the package flows from one root seed through a named
substream, e.g. ``substream(seed, "dataset", q)`` for patient q. Substreams
are independent of each other and of execution order, so per-patient or
per-instance work can run in any order (or in parallel) without changing
results.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _hash_word(token) -> int:
    digest = hashlib.sha256(repr(token).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *names) -> np.random.Generator:
    """Return a generator for the substream identified by ``names``."""
    entropy = [int(seed) & _MASK64] + [_hash_word(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
