"""Fans query evaluation out over worker threads"""

import asyncio
import logging
from typing import Callable, Iterable, Sequence, TypeVar

from .state import Prediction
from .tensor import FlopLedger

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class QueryPool:
    """Runs a per-query function over chunks of inputs on a bounded set of threads"""

    def __init__(self, workers: int = 4, chunk_size: int = 64):
        """
        Initialize query pool

        Args:
            workers: Maximum number of chunks in flight
            chunk_size: Inputs handed to a thread at a time
        """
        if workers < 1 or chunk_size < 1:
            raise ValueError(f"workers and chunk_size must be positive, got {workers}, {chunk_size}")
        self.workers = workers
        self.chunk_size = chunk_size

    async def map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        """
        Apply fn to every item; results keep input order

        fn must only read shared state. Weights are shared read-only and each
        call owns its ledger, so no locking is needed.
        """
        semaphore = asyncio.Semaphore(self.workers)
        chunks = [items[i:i + self.chunk_size] for i in range(0, len(items), self.chunk_size)]

        def run_chunk(chunk: Sequence[T]) -> list[R]:
            return [fn(item) for item in chunk]

        async def bounded(index: int, chunk: Sequence[T]) -> list[R]:
            async with semaphore:
                logger.debug(f"Chunk {index + 1}/{len(chunks)}: {len(chunk)} items")
                return await asyncio.to_thread(run_chunk, chunk)

        results = await asyncio.gather(*(bounded(i, c) for i, c in enumerate(chunks)))
        return [r for chunk in results for r in chunk]

    def run(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        """Blocking wrapper around map for callers outside an event loop"""
        return asyncio.run(self.map(fn, items))


def merge_ledgers(predictions: Iterable[Prediction]) -> FlopLedger:
    """Sum of the per-query ledgers"""
    total = FlopLedger()
    for prediction in predictions:
        total.merge(prediction.ledger)
    return total
