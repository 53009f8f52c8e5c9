import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "QDOTKIT_THREADS"


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get(THREADS_ENV, 1)
    try:
        n = int(threads)
    except ValueError:
        raise ValueError(f"invalid thread count {threads!r}") from None
    return max(1, n)


def map_ordered(fn, items, threads=None):
    """``list(map(fn, items))``, optionally on a thread pool; order is preserved."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
