"""Typing-aware candidate generation and link-prediction evaluation.

A query (known, relation, direction) is handled as tail prediction over a
directed type: (h, r, ?) uses type r, (?, r, t) uses type r + |R|. A correct
answer to a query of type q carries the reverse type of q, so candidates are
scored by p(e) * p(reverse(q) | e) and the best `budget` of them are ranked
by the scoring model.
"""
import logging
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from kgengine.common import (HEAD, SPLITS, TAIL, check_entity, check_relation,
                             reverse_type)
from kgengine.graph import (DEFAULT_NEIGHBORHOOD_HOPS, TRIPLE_COLUMNS,
                            degree_priors, k_hop_neighborhood, type_targets)
from kgengine.metrics import DEFAULT_HITS, pessimistic_rank, summarize_ranks
from kgengine.models import score_candidates
from kgengine.typing_model import (DEFAULT_HOPS, DEFAULT_PER_TYPE_CAP,
                                   typing_table)

logger = logging.getLogger(__name__)

FULL_MODE = 'full'
FTAI_MODE = 'ftai'
MODES = (FULL_MODE, FTAI_MODE)

POOL_UNION = 'union'
POOL_NEIGHBORHOOD = 'neighborhood'
POOL_GLOBAL = 'global'
POOL_ALL = 'all'
POOLS = (POOL_UNION, POOL_NEIGHBORHOOD, POOL_GLOBAL, POOL_ALL)

SELECT_TYPING = 'typing'
SELECT_DEGREE = 'degree'
SELECTIONS = (SELECT_TYPING, SELECT_DEGREE)

NEIGHBORHOOD_SOURCE = 'neighborhood'
GLOBAL_SOURCE = 'global-fallback'

MISS = float('inf')


@dataclass(frozen=True)
class Query:
    known: int
    relation: int
    direction: str = TAIL

    def __post_init__(self):
        if self.direction not in (TAIL, HEAD):
            raise ValueError(f"direction must be '{TAIL}' or '{HEAD}', got '{self.direction}'")

    def directed_type(self, relation_count):
        return self.relation if self.direction == TAIL else self.relation + relation_count

    def answer_type(self, relation_count):
        return reverse_type(self.directed_type(relation_count), relation_count)


@dataclass
class CandidateSet:
    query: Query
    candidates: np.ndarray
    scores: np.ndarray
    sources: list

    def __len__(self):
        return len(self.candidates)

    def __contains__(self, entity):
        return bool(np.isin(entity, self.candidates))


@dataclass
class RankingMetrics:
    mode: str
    budget: int
    mrr: float
    hits: OrderedDict
    mean_query_ms: float
    mean_candidates: float
    recall_at_budget: float
    queries: int
    query_ms: list = field(default_factory=list, repr=False)

    def to_document(self):
        return OrderedDict([
            ('mode', self.mode),
            ('budget', self.budget),
            ('mrr', self.mrr),
            ('hits', self.hits),
            ('mean_query_ms', self.mean_query_ms),
            ('mean_candidates', self.mean_candidates),
            ('recall_at_budget', self.recall_at_budget),
        ])


class FilterIndex:
    """Known answers of every (head, relation) and (relation, tail) over the chosen splits."""

    def __init__(self, kg, splits=SPLITS):
        frame = pd.DataFrame(np.concatenate([kg.split(name) for name in splits]), columns=TRIPLE_COLUMNS)
        self.splits = tuple(splits)
        self.tails = {key: np.sort(values) for key, values in frame.groupby(['head', 'relation'])['tail'].unique().items()}
        self.heads = {key: np.sort(values) for key, values in frame.groupby(['relation', 'tail'])['head'].unique().items()}

    def answers(self, query):
        empty = np.zeros(0, dtype=np.int64)
        if query.direction == TAIL:
            return self.tails.get((query.known, query.relation), empty)
        return self.heads.get((query.relation, query.known), empty)


def directed_type_label(kg, directed_type):
    label = kg.relation_labels[directed_type % kg.relation_count]
    return label if directed_type < kg.relation_count else f"{label}^-1"


def typing_posterior(network, kg, priors, candidates, directed_type, table=None,
                     hops=DEFAULT_HOPS, per_type_cap=DEFAULT_PER_TYPE_CAP, seed=0):
    """p(e) * p(directed_type | e) for each candidate.

    Uses the precomputed typing table when given, otherwise types the
    candidates with the network.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if not len(candidates):
        raise ValueError("typing_posterior needs at least one candidate")
    if table is not None:
        probabilities = table[candidates, directed_type].astype(np.float64)
    else:
        probabilities = typing_table(network, kg, candidates, hops, per_type_cap, seed)[:, directed_type]
    return priors.entity[candidates] * probabilities


def candidate_pool(kg, query, pool=POOL_UNION, hops=DEFAULT_NEIGHBORHOOD_HOPS, neighborhood_cap=None):
    """Sorted pool entity ids and a mask of those reached through the neighborhood."""
    if pool not in POOLS:
        raise ValueError(f"pool must be one of {POOLS}")
    if pool == POOL_ALL:
        everyone = np.arange(kg.entity_count)
        return everyone, np.zeros(kg.entity_count, dtype=bool)

    neighborhood = np.zeros(0, dtype=np.int64)
    if pool in (POOL_UNION, POOL_NEIGHBORHOOD):
        neighborhood = k_hop_neighborhood(kg, query.known, hops, neighborhood_cap)
    fallback = np.zeros(0, dtype=np.int64)
    if pool in (POOL_UNION, POOL_GLOBAL):
        fallback = type_targets(kg, query.directed_type(kg.relation_count))
    entities = np.union1d(neighborhood, fallback).astype(np.int64)
    return entities, np.isin(entities, neighborhood)


def generate_candidates(kg, query, budget, network=None, priors=None, table=None, pool=POOL_UNION,
                        selection=SELECT_TYPING, hops=DEFAULT_NEIGHBORHOOD_HOPS, neighborhood_cap=None,
                        typing_hops=DEFAULT_HOPS, per_type_cap=DEFAULT_PER_TYPE_CAP):
    """Top-`budget` pool entities by typing posterior (or by degree prior alone).

    The gold answer is never injected; ties are broken by entity id.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    check_entity(query.known, kg.entity_count)
    check_relation(query.relation, kg.relation_count)
    priors = priors if priors is not None else degree_priors(kg)

    entities, from_neighborhood = candidate_pool(kg, query, pool, hops, neighborhood_cap)
    if not len(entities):
        return CandidateSet(query, entities, np.zeros(0), [])
    if selection == SELECT_TYPING:
        if network is None and table is None:
            raise ValueError("typing-based selection needs a typing network or a typing table")
        scores = typing_posterior(network, kg, priors, entities, query.answer_type(kg.relation_count),
                                  table, typing_hops, per_type_cap)
    else:
        scores = priors.entity[entities]

    keep = np.lexsort((entities, -scores))[:budget]
    return CandidateSet(query=query,
                        candidates=entities[keep],
                        scores=scores[keep],
                        sources=[NEIGHBORHOOD_SOURCE if flag else GLOBAL_SOURCE for flag in from_neighborhood[keep]])


def rank_query(model, query, candidates, gold, known_answers=()):
    """Filtered pessimistic rank of `gold` among `candidates`; MISS when gold is absent.

    Candidates are deduplicated and scored in id order, then every other known
    answer is dropped, so an all-entity candidate list ranks exactly like a
    full traversal.
    """
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    position = np.searchsorted(candidates, gold)
    if position == len(candidates) or candidates[position] != gold:
        return MISS

    scores = score_candidates(model, query.known, query.relation, candidates, query.direction)
    gold_score = scores[position]
    known_answers = np.asarray(known_answers, dtype=np.int64)
    keep = ~np.isin(candidates, known_answers[known_answers != gold])
    return pessimistic_rank(scores[keep], gold_score)


def full_traversal_rank(model, query, gold, known_answers=()):
    """Reference ranking over every entity, written independently of candidate handling."""
    scores = score_candidates(model, query.known, query.relation, np.arange(model.entity_count), query.direction)
    gold_score = scores[gold]
    mask = np.zeros(model.entity_count, dtype=bool)
    mask[np.asarray(known_answers, dtype=np.int64)] = True
    mask[gold] = False
    return pessimistic_rank(scores[~mask], gold_score)


def recall_at_budget(candidate_sets, golds):
    if len(candidate_sets) != len(golds):
        raise ValueError("recall_at_budget needs one candidate set per gold answer")
    if not len(golds):
        return 0.0
    return float(np.mean([gold in candidates for candidates, gold in zip(candidate_sets, golds)]))


def split_queries(kg, split):
    """Tail query then head query for every triple of the split, with their gold answers."""
    queries = []
    for h, r, t in kg.split(split):
        queries.append((Query(int(h), int(r), TAIL), int(t)))
        queries.append((Query(int(t), int(r), HEAD), int(h)))
    return queries


def evaluate_link_prediction(model, kg, split, mode=FULL_MODE, budget=None, network=None, priors=None,
                             table=None, pool=POOL_UNION, selection=SELECT_TYPING, filter_index=None,
                             workers=1, hits=DEFAULT_HITS, hops=DEFAULT_NEIGHBORHOOD_HOPS,
                             neighborhood_cap=None, progress=False):
    """Filtered MRR/Hits@K over head and tail queries of a split.

    Per-query wall time covers candidate generation and ranking only. In ftai
    mode with typing selection the typing table is computed once up front when
    not supplied.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    filter_index = filter_index if filter_index is not None else FilterIndex(kg)
    budget = kg.entity_count if budget is None else int(budget)
    if mode == FTAI_MODE:
        if budget < 1:
            raise ValueError("budget must be at least 1")
        priors = priors if priors is not None else degree_priors(kg)
        if selection == SELECT_TYPING and table is None:
            if network is None:
                raise ValueError("ftai mode with typing selection needs a typing network or table")
            table = typing_table(network, kg, progress=progress)

    everyone = np.arange(kg.entity_count)

    def run(item):
        query, gold = item
        start = time.perf_counter()
        if mode == FULL_MODE:
            candidates = everyone
        else:
            candidates = generate_candidates(kg, query, budget, priors=priors, table=table, pool=pool,
                                             selection=selection, hops=hops,
                                             neighborhood_cap=neighborhood_cap).candidates
        rank = rank_query(model, query, candidates, gold, filter_index.answers(query))
        return rank, (time.perf_counter() - start) * 1000.0, len(candidates), rank != MISS

    queries = split_queries(kg, split)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(tqdm(executor.map(run, queries), total=len(queries), desc="Ranking", disable=not progress))
    else:
        results = [run(item) for item in tqdm(queries, desc="Ranking", disable=not progress)]

    ranks = [result[0] for result in results]
    query_ms = [result[1] for result in results]
    summary = summarize_ranks(ranks, hits)
    metrics = RankingMetrics(
        mode=mode,
        budget=budget,
        mrr=summary['mrr'],
        hits=summary['hits'],
        mean_query_ms=float(np.mean(query_ms)) if query_ms else 0.0,
        mean_candidates=float(np.mean([result[2] for result in results])) if results else 0.0,
        recall_at_budget=float(np.mean([result[3] for result in results])) if results else 0.0,
        queries=len(results),
        query_ms=query_ms)
    logger.info("%s evaluation on %s (budget %d): MRR %.4f over %d queries, %.3f ms/query",
                mode, split, budget, metrics.mrr, metrics.queries, metrics.mean_query_ms)
    return metrics


def answer_query(model, kg, query, top_k=10, mode=FTAI_MODE, budget=None, table=None, priors=None,
                 pool=POOL_UNION, selection=SELECT_TYPING, filter_index=None):
    """Best `top_k` answers of one query, labelled, with known train answers removed."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    if mode == FULL_MODE:
        candidates = np.arange(kg.entity_count)
    else:
        budget = kg.entity_count if budget is None else budget
        candidates = generate_candidates(kg, query, budget, priors=priors, table=table, pool=pool,
                                         selection=selection).candidates
    candidates = np.unique(candidates)
    if filter_index is not None and len(candidates):
        candidates = candidates[~np.isin(candidates, filter_index.answers(query))]

    answers = []
    if len(candidates):
        scores = score_candidates(model, query.known, query.relation, candidates, query.direction)
        order = np.lexsort((candidates, -scores))[:top_k]
        answers = [OrderedDict([('entity', kg.entity_labels[candidates[i]]), ('score', float(scores[i]))])
                   for i in order]

    return OrderedDict([
        ('entity', kg.entity_labels[query.known]),
        ('relation', kg.relation_labels[query.relation]),
        ('direction', query.direction),
        ('candidates', len(candidates)),
        ('answers', answers),
    ])


def entity_typing(kg, table_row, top_k=10):
    """Most probable directed types of one entity from its typing-table row."""
    order = np.lexsort((np.arange(len(table_row)), -table_row.astype(np.float64)))[:top_k]
    return [OrderedDict([('type', directed_type_label(kg, int(k))), ('probability', float(table_row[k]))])
            for k in order]
