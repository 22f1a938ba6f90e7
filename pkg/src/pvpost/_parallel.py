"""Deterministic fan-out helpers shared by the model fitters."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def child_seeds(seed, n):
    """``n`` independent integer seeds derived from one parent seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def default_threads():
    return os.cpu_count() or 1


def parallel_map(fn, items, threads=1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order preserved."""
    items = list(items)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
