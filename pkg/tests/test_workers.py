# tests/test_workers.py
import logging
import threading
import time

import psutil

import app
from services.workers import THREAD_PREFIX, _pool, cleanup, parallel_map, resolve_threads


def test_resolve_threads(monkeypatch):
    assert resolve_threads(3) == 3
    monkeypatch.setenv("SQUANV_THREADS", "5")
    assert resolve_threads() == 5
    monkeypatch.setenv("SQUANV_THREADS", "0")
    assert resolve_threads() == (psutil.cpu_count(logical=False) or 1)


def test_parallel_map_keeps_input_order():
    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert parallel_map(slow_square, range(5), threads=4) == [0, 1, 4, 9, 16]
    assert parallel_map(slow_square, [], threads=4) == []


def test_nested_parallel_map_runs_inline():
    def inner(x):
        return [threading.current_thread().name for _ in range(x)], [x * k for k in range(3)]

    def outer(x):
        names_and_values = parallel_map(inner, [x, x + 1], threads=2)
        return threading.current_thread().name, names_and_values

    results = parallel_map(outer, range(4), threads=2)
    for x, (name, nested) in enumerate(results):
        assert name.startswith(THREAD_PREFIX)
        assert [values for _, values in nested] == [[0, x, 2 * x], [0, x + 1, 2 * (x + 1)]]
        assert all(inner_name == name for names, _ in nested for inner_name in names)


def test_pool_creation_is_shared_across_threads():
    cleanup()
    barrier = threading.Barrier(8)
    seen = []

    def grab():
        barrier.wait()
        seen.append(_pool(3))

    starters = [threading.Thread(target=grab) for _ in range(8)]
    for t in starters:
        t.start()
    for t in starters:
        t.join()
    assert len({id(p) for p in seen}) == 1
    cleanup()
    assert parallel_map(lambda x: x + 1, range(3), threads=3) == [1, 2, 3]


def test_configure_logging_installs_one_handler():
    app.configure_logging("DEBUG")
    app.configure_logging("INFO")
    root = logging.getLogger()
    assert sum(getattr(h, "_squanv", False) for h in root.handlers) == 1
    assert root.level == logging.INFO
