"""Chunked thread-pool map.  Every task in this package is elementwise over
its chunk, so the worker count changes wall time only."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def chunks(n, workers, min_chunk=64):
    workers = max(1, int(workers or 1))
    if workers == 1 or n <= min_chunk:
        return [np.arange(n)]
    k = min(workers * 2, max(1, n // min_chunk))
    return [c for c in np.array_split(np.arange(n), k) if c.size]


def map_chunks(fn, n, workers=1, min_chunk=64):
    """Apply ``fn(index_array)`` over chunks of range(n); results in chunk order."""
    parts = chunks(n, workers, min_chunk)
    if len(parts) == 1:
        return parts, [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return parts, list(pool.map(fn, parts))
