import numpy as np
import pytest

from kgengine.metrics import hits_at, mean_reciprocal_rank, pessimistic_rank, summarize_ranks

MISS = float('inf')


def test_reciprocal_ranks():
    assert mean_reciprocal_rank([1, 2, 4]) == pytest.approx(1.75 / 3, abs=1e-12)


def test_miss_counts_as_zero():
    summary = summarize_ranks([1, MISS])
    assert summary['mrr'] == 0.5
    assert summary['hits'] == {'1': 0.5, '3': 0.5, '10': 0.5}


def test_empty():
    assert summarize_ranks([]) == {'mrr': 0.0, 'hits': {'1': 0.0, '3': 0.0, '10': 0.0}}


def test_ties_are_pessimistic():
    assert pessimistic_rank(np.array([1.0, 1.0, 1.0]), 1.0) == 3
    assert pessimistic_rank(np.array([3.0, 1.0, 0.5]), 1.0) == 2


@pytest.mark.parametrize("seed", range(5))
def test_bounds_and_monotone_hits(seed):
    ranks = np.random.default_rng(seed).integers(1, 30, size=50)
    hits = [hits_at(ranks, k) for k in (1, 3, 10)]
    assert hits == sorted(hits)
    assert 0.0 < mean_reciprocal_rank(ranks) <= 1.0
