"""Ordered batch-level parallelism.

Results always come back in submission order, so reductions over them are
independent of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "XCAL_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: ``XCAL_THREADS`` overrides the argument; default 1."""
    env = os.environ.get(ENV_THREADS)
    if env:
        threads = int(env)
    threads = 1 if threads is None else int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> Iterator[R]:
    n = resolve_threads(threads)
    if n == 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield from pool.map(fn, items)
