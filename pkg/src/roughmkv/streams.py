"""Deterministic random streams.

All randomness in the package flows through counter-based Philox generators
keyed by ``(seed, *tags)``.  Tags are small integers naming the consumer (one
per particle, one for the driving signal, one per backward start time, ...),
so distinct consumers never share a stream and every draw is reproducible
from the seed alone, independent of evaluation order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "TAG_DRIVER", "TAG_PARTICLE", "TAG_INITIAL", "TAG_BACKWARD"]

# Stream namespaces.  Values are arbitrary but frozen: changing them changes
# every sampled number in the package.
TAG_DRIVER = 101
TAG_PARTICLE = 202
TAG_INITIAL = 303
TAG_BACKWARD = 404


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for the consumer named by ``(seed, *tags)``."""
    seq = np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags))
    return np.random.Generator(np.random.Philox(seq))
