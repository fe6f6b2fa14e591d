from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; order is preserved."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
