"""Shared fixtures: tiny hyperparameters, random weights and random encoded samples"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import numpy as np
import pytest

from hopgate.babi import Sample
from hopgate.state import HyperParams, IcnWeights, Variant
from hopgate.trainer import init_weights


def _random_samples(hyper: HyperParams, n: int, seed: int = 0, task_id: int = 1) -> list[Sample]:
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        values = None
        if hyper.variant == Variant.KEY_VALUE:
            values = rng.integers(1, hyper.V, size=hyper.n_s)
        samples.append(Sample(
            story_grid=rng.integers(1, hyper.V, size=(hyper.n_s, hyper.n_w)),
            query_ids=rng.integers(1, hyper.V, size=hyper.n_w),
            answer_id=int(rng.integers(1, hyper.V)),
            task_id=task_id,
            value_ids=values,
        ))
    return samples


def _constant_icn(d: int, l1: int, easy_bias: float) -> IcnWeights:
    """ICN whose output ignores u2: p_easy = sigmoid(2 * easy_bias)"""
    return IcnWeights(
        W1=np.zeros((l1, d)),
        b1=np.zeros(l1),
        W2=np.zeros((2, l1)),
        b2=np.array([easy_bias, -easy_bias]),
    )


@pytest.fixture
def make_samples():
    return _random_samples


@pytest.fixture
def make_weights():
    def build(hyper: HyperParams, seed: int = 0, with_fc_e: bool = True):
        weights = init_weights(hyper, seed)
        if with_fc_e:
            weights.W_E = weights.W.copy()
        return weights
    return build


@pytest.fixture
def constant_icn():
    return _constant_icn


@pytest.fixture
def tiny_hyper() -> HyperParams:
    return HyperParams(d=4, V=6, n_s=3, n_w=2, m=2)


@pytest.fixture
def babi_hyper() -> HyperParams:
    """Dimensions of the jointly trained bAbI network"""
    return HyperParams(d=40, V=174, n_s=50, n_w=8)
