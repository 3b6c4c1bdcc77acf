"""
Seeded random streams.

Every random number in medimux comes from a Philox generator keyed by the
master seed plus a tuple of integers naming the stream (purpose, draw index,
...). Streams are addressed, not consumed in sequence, so work units produce
the same numbers whichever thread runs them and in whatever order.
"""
import hashlib

import numpy as np

PARAMETERS = 0
SIMULATION = 1
TABLE = 2
EXTRACT = 3
COVARIATES = 4


def substream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    seed_sequence = np.random.SeedSequence(
        int(seed), spawn_key=tuple(int(k) for k in key)
    )
    return np.random.Generator(np.random.Philox(seed_sequence))


def derive_seed(*parts):
    """
    Stable 63-bit seed from arbitrary printable parts, e.g.
    ``derive_seed(master_seed, "run", 1000, 0.7, 12)``.
    """
    text = ":".join(str(part) for part in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
