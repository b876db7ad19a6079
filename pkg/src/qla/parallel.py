"""Order-preserving replicate evaluation on a thread pool."""
from concurrent.futures import ThreadPoolExecutor
import os


def resolve_threads(threads):
    if threads in (None, "auto"):
        return os.cpu_count() or 1
    n = int(threads)
    if n < 1:
        raise ValueError("threads must be >= 1 or 'auto'")
    return n


def replicate_map(fn, keys, threads=1, chunk=64):
    """``[fn(k) for k in keys]`` computed in chunks across ``threads`` workers.

    Output order follows ``keys``; with per-key random streams the result does
    not depend on the worker count.
    """
    keys = list(keys)
    threads = resolve_threads(threads)
    if threads == 1 or len(keys) <= chunk:
        return [fn(k) for k in keys]
    parts = [keys[i : i + chunk] for i in range(0, len(keys), chunk)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        done = list(ex.map(lambda ks: [fn(k) for k in ks], parts))
    return [r for part in done for r in part]
