"""Counter-based random streams keyed by (seed, purpose, block index).

Paths are grouped in blocks of fixed size; each block draws from its own
Philox stream, so the numbers a path sees do not depend on how blocks are
distributed over workers.  Reductions are always done in block order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["stream", "block_slices", "map_blocks"]


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def block_slices(n: int, block: int) -> list:
    return [slice(s, min(s + block, n)) for s in range(0, n, block)]


def map_blocks(fn, items, workers: int = 1) -> list:
    """``[fn(item) for item in items]``, possibly on a thread pool; order preserved."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
