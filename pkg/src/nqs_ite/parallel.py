"""Fixed-chunk fan-out with deterministic reduction.

Row batches are always cut at the same boundaries and partial results are
combined by a fixed pairwise tree, so results do not depend on the number
of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_ROWS = 2048

_threads: int | None = None
_pool: ThreadPoolExecutor | None = None


def get_threads() -> int:
    if _threads is not None:
        return _threads
    return max(1, int(os.environ.get("NQS_THREADS", "1")))


def set_threads(n: int | None) -> None:
    global _threads, _pool
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n
    if _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None


def _executor() -> ThreadPoolExecutor | None:
    global _pool
    n = get_threads()
    if n == 1:
        return None
    if _pool is None or _pool._max_workers != n:
        _pool = ThreadPoolExecutor(max_workers=n)
    return _pool


def chunk_bounds(n_rows: int, chunk: int = CHUNK_ROWS) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n_rows)) for a in range(0, n_rows, chunk)] or [(0, 0)]


def map_chunks(fn, n_rows: int, chunk: int = CHUNK_ROWS) -> list:
    """Apply ``fn(lo, hi)`` to each fixed chunk; results in chunk order."""
    bounds = chunk_bounds(n_rows, chunk)
    pool = _executor()
    if pool is None or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    return list(pool.map(lambda b: fn(*b), bounds))


def tree_sum(parts: list):
    """Pairwise sum in a fixed order."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to sum")
    while len(parts) > 1:
        nxt = [parts[k] + parts[k + 1] for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def batch_sum(values: np.ndarray, chunk: int = 256):
    """Deterministic sum over the leading axis: per-chunk numpy sums, then a tree."""
    values = np.asarray(values)
    if len(values) == 0:
        raise ValueError("empty batch")
    return tree_sum([values[lo:hi].sum(axis=0) for lo, hi in chunk_bounds(len(values), chunk)])


def batch_mean(values: np.ndarray, weights: np.ndarray | None = None):
    """Mean over the leading axis, or weighted sum when ``weights`` is given (weights sum to 1)."""
    values = np.asarray(values)
    if weights is None:
        return batch_sum(values) / len(values)
    w = np.asarray(weights)
    return batch_sum(values * w.reshape((-1,) + (1,) * (values.ndim - 1)))
