"""Counter-based random streams.

Every draw is addressed by (seed, tick, purpose, person index): the stream
for (seed, tick, purpose) is a Philox sequence keyed by the seed with the
tick and purpose in the counter, and person ``i`` reads element ``i``.
Draws therefore do not depend on iteration order or on how persons are
split across workers.
"""

from __future__ import annotations

import numpy as np

FLOOR = 1
SPEED = 2
INDOOR_DEATH = 3
OUTDOOR_DEATH = 4

SEED_LIMIT = 2**64


def uniforms(seed: int, tick: int, purpose: int, n: int) -> np.ndarray:
    """``n`` uniform draws in [0, 1) for the given stream address."""
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    bitgen = np.random.Philox(key=seed, counter=np.array([0, tick, purpose, 0], dtype=np.uint64))
    return np.random.Generator(bitgen).random(n)
