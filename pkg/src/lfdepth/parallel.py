"""Chunked task execution over disjoint output slots.

Kernels are numba ``nogil`` functions that process the half-open task
range ``[lo, hi)`` and write only their own slots, so results do not
depend on how the range is split or on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def run_chunks(fn, n_tasks: int, workers: int = 1, chunks_per_worker: int = 4) -> None:
    if workers <= 1 or n_tasks < 2:
        fn(0, n_tasks)
        return
    n_chunks = min(n_tasks, workers * chunks_per_worker)
    bounds = [n_tasks * i // n_chunks for i in range(n_chunks + 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, bounds[i], bounds[i + 1]) for i in range(n_chunks)]
        for f in futures:
            f.result()
