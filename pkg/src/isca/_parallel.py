"""Block-range parallelism with results independent of the thread count.

Work is always split into the same fixed-size chunks of block indices; the
thread count only decides how many chunks run at once. Each chunk writes a
disjoint slice, so outputs are identical for any number of threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 256


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("ISCA_THREADS")
    if env:
        threads = int(env)
    if not threads or threads < 1:
        threads = os.cpu_count() or 1
    return threads


def block_chunks(n_blocks: int) -> list[slice]:
    return [slice(i, min(i + CHUNK, n_blocks)) for i in range(0, n_blocks, CHUNK)]


def for_each_chunk(fn, n_blocks: int, threads: int | None = 1) -> None:
    """Call ``fn(slice)`` for every fixed chunk of ``range(n_blocks)``."""
    chunks = block_chunks(n_blocks)
    threads = resolve_threads(threads)
    if threads <= 1 or len(chunks) == 1:
        for sl in chunks:
            fn(sl)
        return
    with ThreadPoolExecutor(max_workers=min(threads, len(chunks))) as pool:
        for fut in [pool.submit(fn, sl) for sl in chunks]:
            fut.result()
