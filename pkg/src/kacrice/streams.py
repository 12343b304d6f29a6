"""Reproducible counter-based random streams.

Every sampler in this package takes an explicit ``numpy.random.Generator``.
Streams are keyed by (master seed, stream ids...) through a Philox counter
generator, so parallel Monte Carlo runs are reproducible regardless of
scheduling: the same key always yields the same stream.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return the generator for stream ``ids`` under master ``seed``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))
