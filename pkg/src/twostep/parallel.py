"""Worker-pool sizing and an order-preserving parallel map.

All parallel kernels in the package go through :func:`ordered_map`, which
returns results in input order.  Each task is computed independently and the
reductions happen afterwards in a fixed order, so outputs do not depend on the
pool size.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_threads: int | None = None


def set_threads(n: int | None) -> None:
    """Set the pool size for this process (``None`` falls back to the env var)."""
    global _threads
    if n is not None and int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = None if n is None else int(n)


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get("TWOSTEP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def ordered_map(fn, items, threads: int | None = None) -> list:
    items = list(items)
    n = get_threads() if threads is None else threads
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def chunks(n: int, size: int):
    """Half-open index ranges covering ``range(n)`` in blocks of ``size``."""
    size = max(1, int(size))
    return [(a, min(a + size, n)) for a in range(0, n, size)]
