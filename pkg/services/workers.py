import atexit
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, TypeVar

import psutil

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREAD_PREFIX = "squanv"

# One executor per worker count, shut down on exit
_pools: Dict[int, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count from the argument or SQUANV_THREADS; 0 means one per physical core"""
    if requested is None:
        requested = int(os.getenv("SQUANV_THREADS", "0") or 0)
    if requested < 0:
        requested = 0
    if requested == 0:
        requested = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    return max(1, int(requested))


def in_worker() -> bool:
    return threading.current_thread().name.startswith(THREAD_PREFIX)


def _pool(threads: int) -> ThreadPoolExecutor:
    with _pools_lock:
        if threads not in _pools:
            logger.debug(f"Starting worker pool with {threads} threads")
            _pools[threads] = ThreadPoolExecutor(max_workers=threads, thread_name_prefix=THREAD_PREFIX)
        return _pools[threads]


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item and return the results in input order.

    Callers reduce the returned list themselves, in index order, so the outcome
    does not depend on the worker count. Calls made from inside a worker run
    inline, so nesting never waits on its own pool.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1 or in_worker():
        return [fn(item) for item in items]
    return list(_pool(threads).map(fn, items))


def cleanup():
    with _pools_lock:
        pools = list(_pools.items())
        _pools.clear()
    for threads, pool in pools:
        try:
            pool.shutdown(wait=False, cancel_futures=True)
        except Exception as e:
            logger.warning(f"Error stopping worker pool ({threads} threads): {e}")


atexit.register(cleanup)
