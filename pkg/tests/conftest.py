import numpy as np
import pytest

from kgengine.graph import from_triples, load_knowledge_graph

TOY_TRAIN = [
    ('alice', 'bornIn', 'paris'),
    ('bob', 'bornIn', 'london'),
    ('alice', 'actedIn', 'film1'),
    ('alice', 'actedIn', 'film2'),
    ('bob', 'actedIn', 'film1'),
    ('carol', 'actedIn', 'film2'),
    ('paris', 'capitalOf', 'france'),
    ('london', 'capitalOf', 'uk'),
    ('alice', 'bornIn', 'paris'),
]
TOY_VALID = [('carol', 'bornIn', 'paris')]
TOY_TEST = [('bob', 'actedIn', 'film2'), ('dave', 'bornIn', 'paris')]


def write_triples(path, triples):
    with open(path, 'w', encoding='utf-8') as f:
        for triple in triples:
            f.write('\t'.join(triple) + '\n')
    return str(path)


@pytest.fixture
def dataset_paths(tmp_path):
    return {
        'train_path': write_triples(tmp_path / 'train.txt', TOY_TRAIN),
        'valid_path': write_triples(tmp_path / 'valid.txt', TOY_VALID),
        'test_path': write_triples(tmp_path / 'test.txt', TOY_TEST),
    }


@pytest.fixture
def toy_kg(dataset_paths):
    return load_knowledge_graph(dataset_paths['train_path'], dataset_paths['valid_path'],
                                dataset_paths['test_path'])


@pytest.fixture
def chain_kg():
    # 0 -r0-> 1 -r0-> 2
    return from_triples([(0, 0, 1), (1, 0, 2)])


@pytest.fixture
def typing_kg():
    """20 entities, 4 relations: people born in cities, acting in films, cities in countries."""
    rng = np.random.default_rng(7)
    people, cities, films, countries = range(0, 8), range(8, 12), range(12, 17), range(17, 20)
    triples = set()
    for person in people:
        triples.add((person, 0, int(rng.choice(list(cities)))))
        for film in rng.choice(list(films), size=2, replace=False):
            triples.add((person, 1, int(film)))
    for city in cities:
        triples.add((city, 2, int(rng.choice(list(countries)))))
    for film in films:
        triples.add((film, 3, int(rng.choice(list(countries)))))
    triples = np.array(sorted(triples), dtype=np.int64)
    valid = [(0, 1, int(f)) for f in films if (0, 1, f) not in set(map(tuple, triples.tolist()))][:2]
    return from_triples(triples, valid=valid, test=valid, entity_count=20, relation_count=4)
