"""Execution backends for the batch operators.

Two backends with bit-identical outputs: `naive` runs element kernels in a
single loop, `parallel` fans contiguous chunks out to a process pool (GMP
big-int kernels hold the GIL, so threads would not scale). Work is split
into at most worker_count chunks of ceil(count / workers) elements each;
the fixed schedule keeps runs reproducible.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor


def _run_chunk(args):
    kernel, common, items = args
    return kernel(common, items)


class ExecutionBackend:
    """Maps a chunk kernel over a list of work items, preserving order."""

    name = "base"
    worker_count = 1

    def run(self, kernel, common, items: list) -> list:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"{type(self).__name__}(workers={self.worker_count})"


class NaiveBackend(ExecutionBackend):
    name = "naive"

    def run(self, kernel, common, items):
        return kernel(common, items)


class ParallelBackend(ExecutionBackend):
    name = "parallel"

    def __init__(self, workers: int | None = None):
        self.worker_count = workers if workers else (os.cpu_count() or 1)
        self._pool = None

    def _ensure_pool(self):
        if self._pool is None:
            ctx = multiprocessing.get_context("fork")
            self._pool = ProcessPoolExecutor(max_workers=self.worker_count, mp_context=ctx)
        return self._pool

    def run(self, kernel, common, items):
        if len(items) <= 1 or self.worker_count == 1:
            return kernel(common, items)
        chunk = -(-len(items) // self.worker_count)
        tasks = [(kernel, common, items[i:i + chunk]) for i in range(0, len(items), chunk)]
        pool = self._ensure_pool()
        out = []
        for part in pool.map(_run_chunk, tasks):
            out.extend(part)
        return out

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def get_backend(name: str, workers: int | None = None) -> ExecutionBackend:
    if name == "naive":
        return NaiveBackend()
    if name == "parallel":
        return ParallelBackend(workers)
    raise ValueError(f"unknown backend: {name!r}")
