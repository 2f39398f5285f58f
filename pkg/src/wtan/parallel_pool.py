"""Ordered parallel map used where the contracts allow parallel work.

Results always come back in input order, so any reduction done by the caller
is independent of the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "WTAN_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        try:
            threads = int(os.environ.get(ENV_THREADS, "1"))
        except ValueError:
            threads = 1
    return max(1, int(threads))


def pmap(fn, items, threads: int | None = None) -> list:
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
