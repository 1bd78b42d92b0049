"""Small shared utilities."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from PARAREACH_THREADS; defaults to 1 (serial)."""
    raw = os.environ.get("PARAREACH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map honoring the worker cap.

    Results are identical to the serial map regardless of the cap; only wall
    time changes.
    """
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
