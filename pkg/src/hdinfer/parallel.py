"""Order-preserving parallel map used for splits, subsamples and replicates."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def parallel_map(func, items, n_jobs=1):
    """``[func(x) for x in items]`` evaluated on up to ``n_jobs`` threads.

    Results come back in input order, so any reduction over them is
    independent of the thread count.  The numerical kernels release the GIL.
    """
    items = list(items)
    if n_jobs is None or n_jobs <= 0:
        n_jobs = default_threads()
    if n_jobs == 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n_jobs, len(items))) as pool:
        return list(pool.map(func, items))
