"""Deterministic chunked Monte Carlo: fixed chunk layout, one child stream
per chunk, thread pool for speed only, compensated ordered reductions."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

__all__ = ["resolve_threads", "root_entropy", "chunk_sizes", "chunk_generator", "run_chunks", "fsum_rows"]

CHUNK_TARGET = 4096
MIN_CHUNKS = 8

R = TypeVar("R")


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else SMALLBALL_THREADS, else the CPU count."""
    if threads is None:
        env = os.environ.get("SMALLBALL_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def root_entropy(rng) -> int:
    """An integer seed, or one 63-bit draw from a Generator."""
    if isinstance(rng, (int, np.integer)):
        if rng < 0:
            raise ValueError("seed must be nonnegative")
        return int(rng)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    raise TypeError("rng must be a numpy Generator or a nonnegative int seed")


def chunk_sizes(n: int, target: int = CHUNK_TARGET, min_chunks: int = MIN_CHUNKS) -> list[int]:
    """Split n replicates into nearly equal chunks; depends on n only."""
    n = int(n)
    if n < 1:
        raise ValueError("need at least one replicate")
    k = max(min(min_chunks, n), -(-n // target))
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def chunk_generator(entropy: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=(stream, index))))


def run_chunks(
    work: Callable[[int, int, np.random.Generator], R],
    sizes: Sequence[int],
    entropy: int,
    threads: int | None = None,
    stream: int = 0,
) -> list[R]:
    """Evaluate ``work(index, size, rng)`` per chunk; results in chunk order."""
    nthreads = min(resolve_threads(threads), len(sizes))

    def one(i):
        return work(i, sizes[i], chunk_generator(entropy, i, stream))

    if nthreads == 1:
        return [one(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(one, range(len(sizes))))


def fsum_rows(rows) -> np.ndarray:
    """Column-wise math.fsum over a sequence of equal-length vectors."""
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        return np.array([math.fsum(arr)])
    return np.array([math.fsum(col) for col in arr.T])
