"""Row-chunked evaluation over a thread pool.

Particles are independent between resampling barriers, so work is split into
contiguous row blocks.  All kernels used inside are row-wise, which keeps the
results identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def default_workers() -> int:
    return os.cpu_count() or 1


class RowPool:
    def __init__(self, workers: int = 1):
        if int(workers) < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.workers = int(workers)
        self._executor = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def map(self, fn, *arrays):
        """Apply ``fn`` to aligned row blocks of ``arrays`` and stitch the outputs.

        ``fn`` returns an array or a tuple of arrays (``None`` entries pass through).
        """
        n = len(arrays[0])
        if self._executor is None or n < 2 * self.workers:
            return fn(*arrays)
        bounds = np.linspace(0, n, self.workers + 1).astype(int)
        blocks = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        parts = list(self._executor.map(lambda args: fn(*args), blocks))
        if isinstance(parts[0], tuple):
            return tuple(
                None if parts[0][i] is None else np.concatenate([p[i] for p in parts])
                for i in range(len(parts[0]))
            )
        return np.concatenate(parts)
