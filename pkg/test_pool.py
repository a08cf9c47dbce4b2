"""
Tests for the threaded query pool
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import threading

import pytest

from hopgate.engine import forward
from hopgate.pool import QueryPool, merge_ledgers


@pytest.mark.asyncio
async def test_map_keeps_order():
    pool = QueryPool(workers=3, chunk_size=4)
    assert await pool.map(lambda x: x * x, list(range(25))) == [x * x for x in range(25)]


@pytest.mark.asyncio
async def test_map_uses_worker_threads():
    seen = set()

    def record(x):
        seen.add(threading.get_ident())
        return x

    await QueryPool(workers=2, chunk_size=1).map(record, list(range(8)))
    assert threading.get_ident() not in seen


def test_run_empty():
    assert QueryPool().run(lambda x: x, []) == []


def test_invalid_pool_size():
    with pytest.raises(ValueError):
        QueryPool(workers=0)


def test_parallel_predictions_match_serial(tiny_hyper, make_weights, make_samples):
    """Test that per-query ledgers stay separate under concurrency"""
    weights = make_weights(tiny_hyper)
    samples = make_samples(tiny_hyper, 30)
    serial = [forward(weights, tiny_hyper, s) for s in samples]
    parallel = QueryPool(workers=4, chunk_size=3).run(lambda s: forward(weights, tiny_hyper, s), samples)
    assert [p.answer_id for p in parallel] == [p.answer_id for p in serial]
    assert merge_ledgers(parallel).as_dict() == merge_ledgers(serial).as_dict()
    assert merge_ledgers(parallel).total() == 30 * serial[0].ledger.total()
