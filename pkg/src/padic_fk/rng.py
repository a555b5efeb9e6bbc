"""Counter-based random streams and deterministic chunked execution.

Work is split into fixed-size chunks of path indices.  Chunk ``c`` always
draws from the Philox stream keyed by ``(seed, stream, c)``, so results do
not depend on how many worker threads process the chunks.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, TypeVar

import numpy as np

CHUNK_SIZE = 4096
THREADS_ENV = "PADIC_FK_THREADS"

T = TypeVar("T")


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0
    counter: int = 0
    generator: str = "philox4x64"

    def bit_generator(self, chunk: int = 0) -> np.random.Philox:
        key = np.random.SeedSequence(self.seed, spawn_key=(self.stream, chunk)).generate_state(2, np.uint64)
        return np.random.Philox(key=key, counter=np.array([self.counter, 0, 0, 0], dtype=np.uint64))

    def rng(self, chunk: int = 0) -> np.random.Generator:
        return np.random.Generator(self.bit_generator(chunk))

    def substream(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream, self.counter, self.generator)

    def record(self) -> dict:
        return asdict(self)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def run_chunks(fn: Callable[[int, int, int], T], n_items: int, threads: int | None = None,
               chunk_size: int = CHUNK_SIZE) -> list[T]:
    """Call ``fn(chunk, start, stop)`` over fixed chunks; results in chunk order."""
    bounds = [(c, s, min(s + chunk_size, n_items))
              for c, s in enumerate(range(0, n_items, chunk_size))]
    threads = resolve_threads(threads)
    if threads == 1 or len(bounds) <= 1:
        return [fn(*b) for b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
