"""Row-band worker pool.

Workers only ever write disjoint slices of one output array and read
immutable inputs, so results do not depend on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

WORKERS_ENV = "CSPN_WORKERS"

_pools: dict[int, ThreadPoolExecutor] = {}


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        return default_workers()
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers


def bands(n: int, workers: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``workers`` contiguous, non-empty bands."""
    workers = max(1, min(workers, n))
    edges = [n * k // workers for k in range(workers + 1)]
    return [(edges[k], edges[k + 1]) for k in range(workers) if edges[k] < edges[k + 1]]


def pool(workers: int) -> ThreadPoolExecutor:
    if workers not in _pools:
        _pools[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="cspn")
    return _pools[workers]


def run_bands(fn: Callable[[int, int], None], n: int, workers: int | None) -> None:
    """Call ``fn(start, stop)`` over row bands covering ``range(n)``."""
    workers = resolve_workers(workers)
    parts = bands(n, workers)
    if len(parts) <= 1:
        for start, stop in parts:
            fn(start, stop)
        return
    futures = [pool(workers).submit(fn, start, stop) for start, stop in parts]
    for f in futures:
        f.result()
