"""Deterministic worker pool with per-thread busy-time accounting.

Work is split into a fixed number of chunks evaluated concurrently; chunk
results are concatenated in submission order, so outputs are bitwise
independent of the worker count.  Each task measures its own thread time,
feeding the CPU-time (as opposed to wall-time) accounting of the harness.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["WorkerPool"]


class WorkerPool:
    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        self._executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        self._busy = 0.0

    @property
    def busy_seconds(self) -> float:
        """Total thread time consumed by pool tasks so far."""
        return self._busy

    def map_rows(self, fn, array: np.ndarray) -> np.ndarray:
        """Apply ``fn`` to row-chunks of ``array`` and concatenate the results.

        ``fn`` must be row-local: the output rows for a chunk may depend only
        on that chunk's input rows, which makes the concatenation bitwise
        identical for every chunking.
        """
        if self._executor is None or array.shape[0] < 2 * self.threads:
            return fn(array)
        chunks = np.array_split(array, self.threads, axis=0)

        def timed(chunk):
            t0 = time.thread_time()
            out = fn(chunk)
            return out, time.thread_time() - t0

        futures = [self._executor.submit(timed, c) for c in chunks if c.shape[0]]
        outs = []
        for fut in futures:
            out, spent = fut.result()
            outs.append(out)
            self._busy += spent
        return np.concatenate(outs, axis=0)

    def shutdown(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
