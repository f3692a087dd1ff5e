"""Thread fan-out that never changes results: outputs keep input order."""

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "MFABOED_THREADS"


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
