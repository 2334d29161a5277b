"""Deterministic random-stream management.

Every stochastic routine in the package draws from a substream derived from
(seed, *key) via numpy's SeedSequence.  Substreams are independent across
distinct keys and reproducible across processes, platforms and thread
counts, so estimates depend only on the seed and the logical key layout.
"""

from __future__ import annotations

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence


def substream(seed: int, *key: int) -> Generator:
    """Generator for the substream identified by (seed, *key)."""
    return Generator(PCG64(SeedSequence((int(seed),) + tuple(int(k) for k in key))))


def child_seed(seed: int, *key: int) -> int:
    """Deterministic nonnegative 63-bit child seed for integer-seed APIs.

    Use when a sub-computation takes a plain integer seed (environment
    sampling, estimator calls) rather than a Generator.
    """
    ss = SeedSequence((int(seed),) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def chunk_bounds(total: int, chunk: int) -> list[tuple[int, int]]:
    """Fixed [start, stop) partition of range(total) into blocks of size chunk.

    The partition depends only on (total, chunk), never on worker count, so
    per-chunk substreams keyed by chunk index give merge-order-independent
    statistics.
    """
    if total < 0 or chunk <= 0:
        raise ValueError("total must be >= 0 and chunk > 0")
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]
