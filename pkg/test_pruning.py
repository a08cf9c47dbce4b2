"""
Tests for FC row pruning
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import numpy as np
import pytest

from hopgate.engine import HopPolicy, forward
from hopgate.errors import ParameterError
from hopgate.pruning import (
    FcOrigin,
    PrunedFC,
    PruneParams,
    build_pruned_heads,
    find_unimportant,
    find_unused,
    grid_search_prune,
    prune,
    pruned_output,
    route_weighted_pruning_ratio,
)
from hopgate.tensor import FlopCategory, FlopLedger


def test_find_unused():
    assert find_unused([2, 4], 5) == {0, 1, 3}
    assert find_unused(range(1, 5), 5) == {0}


def test_find_unimportant():
    m = np.random.default_rng(0).normal(size=(6, 4))
    assert find_unimportant(m, PruneParams(theta_p=0.0, n_p=1)) == set()
    assert find_unimportant(m, PruneParams(theta_p=1e9, n_p=1)) == set(range(6))
    m[2] = 0.01
    assert 2 in find_unimportant(m, PruneParams(theta_p=0.1, n_p=4))


def test_find_unimportant_rejects_wide_n_p():
    with pytest.raises(ParameterError):
        find_unimportant(np.ones((3, 4)), PruneParams(theta_p=0.1, n_p=5))


def test_prune_nothing_is_identity():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(10, 5))
    pfc = prune(W, [])
    assert pfc.n_rows == 10 and pfc.pruning_ratio == 0.0
    for _ in range(10):
        u = rng.normal(size=5)
        full_ledger, pruned_ledger = FlopLedger(), FlopLedger()
        full = pruned_output(PrunedFC.full(W), u, full_ledger)
        assert pruned_output(pfc, u, pruned_ledger)[0] == full[0]
        assert full_ledger.total() == pruned_ledger.total()


def test_prune_all_but_one():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(8, 3))
    pfc = prune(W, [i for i in range(8) if i != 5])
    assert pfc.n_rows == 1
    for _ in range(5):
        assert pruned_output(pfc, rng.normal(size=3), FlopLedger())[0] == 5


def test_prune_everything_rejected():
    with pytest.raises(ParameterError):
        prune(np.ones((3, 2)), [0, 1, 2])


def test_training_labels_survive():
    W = np.zeros((6, 4))
    pfc = prune(W, range(6), keep_labels=[3])
    assert pfc.important_indices.tolist() == [3]


def test_pruned_fc_cost():
    """Test the FC charge at P_R = 0.6 with bAbI dimensions"""
    W = np.random.default_rng(3).normal(size=(174, 40))
    kept = int(0.4 * 174)
    pfc = prune(W, range(kept, 174))
    ledger = FlopLedger()
    pruned_output(pfc, np.ones(40), ledger)
    assert ledger[FlopCategory.FC] == kept * 79 == 5451


def test_argmax_preserved_when_kept():
    rng = np.random.default_rng(4)
    W = rng.normal(size=(30, 6))
    for _ in range(20):
        u = rng.normal(size=6)
        best = int(np.argmax(W @ u))
        remove = [i for i in range(30) if i != best and rng.uniform() < 0.5]
        assert pruned_output(prune(W, remove), u, FlopLedger())[0] == best


def test_pruning_idempotent():
    W = np.random.default_rng(5).normal(size=(12, 4))
    remove = find_unused([1, 3, 7], 12)
    once = prune(W, remove, keep_labels=[1, 3, 7])
    removed = set(range(12)) - set(once.important_indices.tolist())
    again = prune(W, removed | remove, keep_labels=[1, 3, 7])
    assert again.important_indices.tolist() == once.important_indices.tolist()
    assert np.array_equal(again.rows, once.rows)


def test_pruned_fc_validation():
    with pytest.raises(ParameterError):
        PrunedFC(rows=np.ones((2, 3)), important_indices=np.array([1, 1]), origin=FcOrigin.W, vocab_size=4)
    with pytest.raises(ParameterError):
        PrunedFC(rows=np.ones((2, 3)), important_indices=np.array([1, 4]), origin=FcOrigin.W, vocab_size=4)


def test_route_weighted_pruning_ratio():
    fc_e = prune(np.ones((174, 2)), range(0, 124))
    fc_h = prune(np.ones((174, 2)), range(0, 74))
    assert fc_e.n_rows == 50 and fc_h.n_rows == 100
    assert route_weighted_pruning_ratio(0.5, fc_e, fc_h) == pytest.approx(1 - 75 / 174)
    assert route_weighted_pruning_ratio(0.0, fc_e, fc_h) == pytest.approx(fc_h.pruning_ratio)


def test_build_pruned_heads():
    rng = np.random.default_rng(6)
    W = rng.normal(size=(10, 4))
    heads = build_pruned_heads(W, W.copy(), [2, 5], PruneParams(theta_p=1e9, n_p=1))
    assert set(heads) == {FcOrigin.W, FcOrigin.W_E}
    for head in heads.values():
        assert head.important_indices.tolist() == [2, 5]
    assert set(build_pruned_heads(W, None, [2, 5])) == {FcOrigin.W}


def test_grid_search_prune(tiny_hyper, make_weights, make_samples):
    weights = make_weights(tiny_hyper)
    samples = make_samples(tiny_hyper, 10)
    labels = sorted({s.answer_id for s in samples})
    best = grid_search_prune(weights, tiny_hyper, samples, labels, thetas=[0.0, 1e9], n_ps=[1], budget=1.0)
    assert best is not None
    assert best.pruning_ratio == pytest.approx(1 - len(labels) / tiny_hyper.V)
    assert best.accuracy_loss <= 1.0
    # no accuracy change can reach a negative loss of more than 1
    assert grid_search_prune(weights, tiny_hyper, samples, labels, [0.0], [1], budget=-1.5) is None


def test_pruned_head_in_forward(tiny_hyper, make_weights, make_samples):
    weights = make_weights(tiny_hyper)
    for sample in make_samples(tiny_hyper, 10):
        full = forward(weights, tiny_hyper, sample)
        head = prune(weights.W, [i for i in range(tiny_hyper.V) if i != full.answer_id])
        pruned = forward(weights, tiny_hyper, sample, HopPolicy.ALL_HOPS, fc_h=head)
        assert pruned.answer_id == full.answer_id
        assert pruned.ledger[FlopCategory.FC] == 2 * tiny_hyper.d - 1
