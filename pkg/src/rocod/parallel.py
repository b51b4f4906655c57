"""Worker-pool settings shared by every stage.

Compiled kernels run their outer loop over objects with ``numba.prange``; each
object's result is computed by one thread in a fixed order, so outputs do not
depend on the thread count. Python-level fan-out (one task per behavioral
attribute) goes through :func:`parallel_map`, which preserves input order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, TypeVar

import numba

# the bundled TBB is too old for numba; pick OpenMP unless the user chose a layer
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

T = TypeVar("T")
R = TypeVar("R")


def available_threads() -> int:
    """Upper bound on worker threads the compiled kernels can use."""
    return int(numba.config.NUMBA_NUM_THREADS)


def effective_threads(requested: int | None) -> int:
    if requested is None or requested <= 0:
        return available_threads()
    return max(1, min(int(requested), available_threads()))


@contextmanager
def worker_threads(requested: int | None) -> Iterator[int]:
    """Run compiled kernels with ``requested`` threads (capped at what is available)."""
    n = effective_threads(requested)
    previous = numba.get_num_threads()
    numba.set_num_threads(n)
    try:
        yield n
    finally:
        numba.set_num_threads(previous)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = 1) -> list[R]:
    """Ordered map over ``items``; uses a thread pool when ``threads > 1``.

    Only worthwhile for functions that release the GIL (``nogil`` kernels,
    large numpy calls).
    """
    items = list(items)
    n = effective_threads(threads) if threads else 1
    n = min(n, len(items), os.cpu_count() or 1) if items else 1
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
