"""Counter-based random streams and order-independent reductions.

Paths are generated in fixed blocks of ``BLOCK_SIZE`` consecutive path
indices.  Each block draws from its own Philox stream keyed by
``(seed, tag, block index)``, so any path's randomness is a pure function of
the seed and the path index, whatever the worker count or the range of
paths requested.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

BLOCK_SIZE = 1024
WORKERS_ENV = "LEVYROBUST_WORKERS"

# stream tags keep unrelated consumers of one seed apart
TAG_PATHS = 0
TAG_STARTS = 1
TAG_PROBES = 2
TAG_FIXTURES = 3

T = TypeVar("T")


def _entropy(seed: int) -> int:
    return int(seed) % (1 << 64)


def block_generator(seed: int, block: int, tag: int = TAG_PATHS) -> np.random.Generator:
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def generator(seed: int, tag: int) -> np.random.Generator:
    """Single stream for small auxiliary draws (multi-start points, probes)."""
    return block_generator(seed, 0, tag)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable[[T], object], items: Iterable[T], workers: int | None = None) -> list:
    """Ordered map; with ``workers > 1`` runs on a thread pool."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def blocks_for(n_paths: int, path_index_base: int = 0) -> list[tuple[int, int, int]]:
    """``(block, lo, hi)`` triples covering global indices ``[base, base + n)``.

    ``lo``/``hi`` are offsets inside the block.
    """
    start, stop = path_index_base, path_index_base + n_paths
    out = []
    for b in range(start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE + 1):
        lo = max(start, b * BLOCK_SIZE) - b * BLOCK_SIZE
        hi = min(stop, (b + 1) * BLOCK_SIZE) - b * BLOCK_SIZE
        out.append((b, lo, hi))
    return out


def tree_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` with a fixed pairwise tree over blocks of rows."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = values.shape[0]
    if n == 0:
        return np.zeros(values.shape[1:])
    parts = [values[i:i + BLOCK_SIZE].sum(axis=0) for i in range(0, n, BLOCK_SIZE)]
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def tree_mean(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return float(tree_sum(values) / values.shape[0])


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error, both via the fixed tree."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    m = tree_mean(values)
    if n < 2:
        return m, float("nan")
    var = float(tree_sum((values - m) ** 2)) / (n - 1)
    return m, float(np.sqrt(var / n))
