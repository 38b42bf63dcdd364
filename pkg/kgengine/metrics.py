from collections import OrderedDict

import numpy as np

DEFAULT_HITS = (1, 3, 10)


def pessimistic_rank(scores, gold_score):
    """1 + number of other scores >= gold; ties count against the gold entry."""
    return int((np.asarray(scores) >= gold_score).sum())


def mean_reciprocal_rank(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if not len(ranks):
        return 0.0
    return float((1.0 / ranks).mean())


def hits_at(ranks, k):
    ranks = np.asarray(ranks, dtype=np.float64)
    if not len(ranks):
        return 0.0
    return float((ranks <= k).mean())


def summarize_ranks(ranks, ks=DEFAULT_HITS):
    """Ranks may contain inf for misses, which contribute a reciprocal rank of 0."""
    summary = OrderedDict()
    summary['mrr'] = mean_reciprocal_rank(ranks)
    summary['hits'] = OrderedDict((str(k), hits_at(ranks, k)) for k in ks)
    return summary
