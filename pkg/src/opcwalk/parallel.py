"""Deterministic block-parallel map over replica indices.

Replica ``i`` draws all its randomness from seeds derived from
``(master_seed, label, i)``, so splitting the index range into blocks and
running the blocks on any number of threads gives the same results; they
are returned in index order. The compiled kernels release the GIL.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_blocks(fn, n_items: int, threads: int = 1, block: int = 64) -> list:
    """``[fn(lo, hi) for each consecutive block]`` in block order, on up to ``threads`` threads."""
    bounds = [(lo, min(n_items, lo + block)) for lo in range(0, n_items, block)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
