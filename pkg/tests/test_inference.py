import numpy as np
import pytest

from kgengine.common import HEAD, TAIL
from kgengine.graph import DegreePriors, degree_priors, from_triples
from kgengine.inference import (FTAI_MODE, FULL_MODE, GLOBAL_SOURCE, MISS, NEIGHBORHOOD_SOURCE,
                                POOL_ALL, POOL_GLOBAL, POOL_NEIGHBORHOOD, SELECT_DEGREE,
                                FilterIndex, Query, answer_query, entity_typing,
                                evaluate_link_prediction, full_traversal_rank, generate_candidates,
                                rank_query, recall_at_budget, split_queries, typing_posterior)
from kgengine.models import PAIRRE, TRANSE, init_model, score_candidates
from kgengine.typing_model import TypingNetwork, typing_table
from tests.utilities import random_triples


@pytest.fixture
def graph():
    rng = np.random.default_rng(5)
    triples = random_triples(rng, 30, 3, 150)
    order = rng.permutation(len(triples))
    return from_triples(triples[order[:120]], valid=triples[order[120:135]], test=triples[order[135:]],
                        entity_count=30, relation_count=3)


@pytest.fixture
def model(graph):
    return init_model(TRANSE, graph.entity_count, graph.relation_count, 8, rank=4, rng=np.random.default_rng(0))


@pytest.fixture
def table(graph):
    network = TypingNetwork.initialize(graph.relation_count, edge_dim=8, node_dim=8, rng=np.random.default_rng(0))
    return typing_table(network, graph)


def uniform_priors(kg):
    return DegreePriors(entity=np.full(kg.entity_count, 1.0 / kg.entity_count),
                        relation=np.full(kg.relation_count, 1.0 / kg.relation_count))


class TestQuery:

    def test_directed_types(self):
        assert Query(4, 1, TAIL).directed_type(3) == 1
        assert Query(4, 1, HEAD).directed_type(3) == 4
        assert Query(4, 1, TAIL).answer_type(3) == 4
        assert Query(4, 1, HEAD).answer_type(3) == 1

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            Query(0, 0, 'sideways')

    def test_filter_index(self):
        kg = from_triples([(0, 0, 1), (0, 0, 2), (3, 0, 2)], valid=[(0, 0, 3)])
        index = FilterIndex(kg)
        assert index.answers(Query(0, 0, TAIL)).tolist() == [1, 2, 3]
        assert index.answers(Query(2, 0, HEAD)).tolist() == [0, 3]
        assert index.answers(Query(1, 0, TAIL)).tolist() == []
        assert FilterIndex(kg, ('train',)).answers(Query(0, 0, TAIL)).tolist() == [1, 2]


class TestCandidates:

    def test_uniform_priors_rank_by_typing(self, graph, table):
        candidates = np.arange(graph.entity_count)
        scores = typing_posterior(None, graph, uniform_priors(graph), candidates, 2, table=table)
        np.testing.assert_array_equal(np.argsort(-scores, kind='stable'),
                                      np.argsort(-table[:, 2].astype(np.float64), kind='stable'))

    def test_table_and_network_agree(self, graph):
        network = TypingNetwork.initialize(graph.relation_count, edge_dim=8, node_dim=8,
                                           rng=np.random.default_rng(0))
        priors = degree_priors(graph)
        candidates = np.array([3, 9, 27])
        from_table = typing_posterior(network, graph, priors, candidates, 1, table=typing_table(network, graph))
        from_network = typing_posterior(network, graph, priors, candidates, 1)
        np.testing.assert_allclose(from_table, from_network, atol=1e-6)

    def test_identical_structure_ordered_by_prior(self):
        # 0 and 2 each have one outgoing relation-0 edge to a leaf
        kg = from_triples([(0, 0, 1), (2, 0, 3), (4, 1, 5)], entity_count=6)
        network = TypingNetwork.initialize(kg.relation_count, edge_dim=4, node_dim=4, rng=np.random.default_rng(0))
        table = typing_table(network, kg)
        np.testing.assert_allclose(table[0], table[2], atol=1e-7)
        priors = DegreePriors(entity=np.array([0.1, 0.1, 0.3, 0.1, 0.2, 0.2]), relation=np.array([0.5, 0.5]))
        scores = typing_posterior(network, kg, priors, [0, 2], 0, table=table)
        assert scores[1] > scores[0]

    def test_single_candidate(self, graph, table):
        assert typing_posterior(None, graph, degree_priors(graph), [7], 0, table=table)[0] > 0

    def test_empty_candidates(self, graph, table):
        with pytest.raises(ValueError):
            typing_posterior(None, graph, degree_priors(graph), [], 0, table=table)

    def test_large_budget_with_all_pool(self, graph, table):
        candidates = generate_candidates(graph, Query(0, 1), 10 ** 6, table=table, pool=POOL_ALL)
        assert sorted(candidates.candidates.tolist()) == list(range(graph.entity_count))

    def test_budget_respected_and_unique(self, graph, table):
        for budget in (1, 5, 12):
            candidates = generate_candidates(graph, Query(3, 2, HEAD), budget, table=table)
            assert len(candidates) <= budget
            assert len(set(candidates.candidates.tolist())) == len(candidates)
            assert set(candidates.sources) <= {NEIGHBORHOOD_SOURCE, GLOBAL_SOURCE}

    def test_unique_neighbor_kept_at_budget_one(self, chain_kg):
        network = TypingNetwork.initialize(chain_kg.relation_count, edge_dim=4, node_dim=4,
                                           rng=np.random.default_rng(0))
        candidates = generate_candidates(chain_kg, Query(0, 0, TAIL), 1, network=network,
                                         pool=POOL_NEIGHBORHOOD, hops=1)
        assert candidates.candidates.tolist() == [1]
        assert candidates.sources == [NEIGHBORHOOD_SOURCE]

    def test_global_pool_holds_observed_targets(self, graph, table):
        query = Query(0, 1, TAIL)
        candidates = generate_candidates(graph, query, 10 ** 6, table=table, pool=POOL_GLOBAL)
        assert set(candidates.candidates.tolist()) == set(graph.type_targets[1].tolist())
        assert set(candidates.sources) <= {GLOBAL_SOURCE}

    def test_gold_is_not_injected(self):
        kg = from_triples([(0, 0, 1), (2, 1, 3)], entity_count=5)
        network = TypingNetwork.initialize(kg.relation_count, edge_dim=4, node_dim=4, rng=np.random.default_rng(0))
        candidates = generate_candidates(kg, Query(0, 0, TAIL), 5, network=network, pool=POOL_NEIGHBORHOOD)
        assert 4 not in candidates

    def test_degree_selection(self, graph):
        candidates = generate_candidates(graph, Query(0, 0), 5, selection=SELECT_DEGREE, pool=POOL_ALL)
        degrees = graph.entity_degree[candidates.candidates]
        assert degrees.min() >= np.sort(graph.entity_degree)[-5]

    def test_typing_selection_needs_typing(self, graph):
        with pytest.raises(ValueError):
            generate_candidates(graph, Query(0, 0), 5)


class TestRanking:

    def test_gold_scored_highest(self, graph):
        model = init_model(TRANSE, graph.entity_count, graph.relation_count, 8, rng=np.random.default_rng(0))
        model.table.weight[5] = model.table.weight[0] + model.relations[0]
        candidates = np.arange(graph.entity_count)
        scores = score_candidates(model, 0, 0, candidates, TAIL)
        assert scores[5] > np.delete(scores, 5).max()
        assert rank_query(model, Query(0, 0, TAIL), candidates, 5) == 1

    def test_gold_absent(self, graph, model):
        assert rank_query(model, Query(0, 0), [1, 2, 3], 4) == MISS

    def test_full_candidate_set_matches_full_traversal(self, graph, model):
        index = FilterIndex(graph)
        for query, gold in split_queries(graph, 'test'):
            answers = index.answers(query)
            assert rank_query(model, query, np.arange(graph.entity_count), gold, answers) == \
                full_traversal_rank(model, query, gold, answers)

    def test_filtered_never_exceeds_unfiltered(self, graph, model):
        index = FilterIndex(graph)
        for query, gold in split_queries(graph, 'valid'):
            everyone = np.arange(graph.entity_count)
            assert rank_query(model, query, everyone, gold, index.answers(query)) <= \
                rank_query(model, query, everyone, gold)


class TestEvaluation:

    @pytest.mark.parametrize("kind", [TRANSE, PAIRRE])
    def test_all_entity_budget_reproduces_full_traversal(self, graph, table, kind):
        model = init_model(kind, graph.entity_count, graph.relation_count, 8, rank=4, rng=np.random.default_rng(1))
        full = evaluate_link_prediction(model, graph, 'test', mode=FULL_MODE)
        ftai = evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=graph.entity_count,
                                        table=table, pool=POOL_ALL)
        assert ftai.mrr == full.mrr
        assert ftai.hits == full.hits
        assert ftai.recall_at_budget == 1.0

    def test_subset_rank_never_worse_than_full(self, graph, model, table):
        index = FilterIndex(graph)
        for query, gold in split_queries(graph, 'test'):
            full = full_traversal_rank(model, query, gold, index.answers(query))
            for budget in (1, 3, 10):
                candidates = generate_candidates(graph, query, budget, table=table).candidates
                rank = rank_query(model, query, candidates, gold, index.answers(query))
                assert rank == MISS or rank <= full

    def test_candidate_count_within_budget(self, graph, model, table):
        for budget in (1, 3, 10):
            ftai = evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=budget, table=table)
            assert ftai.mean_candidates <= budget
            assert 0.0 <= ftai.mrr <= 1.0

    def test_recall_grows_with_budget(self, graph, model, table):
        recalls = [evaluate_link_prediction(model, graph, 'valid', mode=FTAI_MODE, budget=budget,
                                            table=table).recall_at_budget
                   for budget in (1, 2, 5, 10, 20, 30)]
        assert recalls == sorted(recalls)

    def test_parallel_matches_sequential(self, graph, model, table):
        sequential = evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=10, table=table)
        parallel = evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=10, table=table,
                                            workers=4)
        assert parallel.mrr == sequential.mrr
        assert parallel.queries == 2 * len(graph.test)

    def test_network_computes_table(self, graph, model):
        network = TypingNetwork.initialize(graph.relation_count, edge_dim=8, node_dim=8,
                                           rng=np.random.default_rng(0))
        metrics = evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=5, network=network)
        assert metrics.mean_candidates <= 5

    def test_ftai_needs_typing(self, graph, model):
        with pytest.raises(ValueError):
            evaluate_link_prediction(model, graph, 'test', mode=FTAI_MODE, budget=5)

    def test_document(self, graph, model):
        document = evaluate_link_prediction(model, graph, 'test').to_document()
        assert list(document) == ['mode', 'budget', 'mrr', 'hits', 'mean_query_ms', 'mean_candidates',
                                  'recall_at_budget']
        assert document['budget'] == graph.entity_count
        assert list(document['hits']) == ['1', '3', '10']


class TestRecall:

    @pytest.mark.parametrize("golds,expected", [([1, 2], 1.0), ([7, 8], 0.0), ([1, 8], 0.5)])
    def test_examples(self, golds, expected):
        assert recall_at_budget([np.array([1, 3]), np.array([2, 4])], golds) == expected

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            recall_at_budget([np.array([1])], [1, 2])


class TestAnswers:

    def test_answer_query(self, toy_kg):
        model = init_model(TRANSE, toy_kg.entity_count, toy_kg.relation_count, 8, rng=np.random.default_rng(0))
        query = Query(toy_kg.entity_id('alice'), toy_kg.relation_id('actedIn'), TAIL)
        result = answer_query(model, toy_kg, query, top_k=3, mode=FULL_MODE,
                              filter_index=FilterIndex(toy_kg, ('train',)))
        assert result['entity'] == 'alice'
        assert result['candidates'] == toy_kg.entity_count - 2
        assert len(result['answers']) == 3
        assert not {'film1', 'film2'} & {answer['entity'] for answer in result['answers']}
        scores = [answer['score'] for answer in result['answers']]
        assert scores == sorted(scores, reverse=True)

    def test_entity_typing_labels(self, toy_kg):
        row = np.zeros(6, dtype=np.float32)
        row[4] = 0.7
        row[1] = 0.3
        types = entity_typing(toy_kg, row, top_k=2)
        assert [t['type'] for t in types] == ['actedIn^-1', 'actedIn']
        assert types[0]['probability'] == pytest.approx(0.7)
