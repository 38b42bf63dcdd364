import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd

from kgengine.common import (SPLITS, TEST, TRAIN, VALID, TripleParseError,
                             VocabularyError, check_entity)

logger = logging.getLogger(__name__)

TRIPLE_COLUMNS = ['head', 'relation', 'tail']

UNKNOWN_SKIP = 'skip'
UNKNOWN_ERROR = 'error'
UNKNOWN_POLICIES = (UNKNOWN_SKIP, UNKNOWN_ERROR)

DEFAULT_PRIOR_SMOOTHING = 1.0
DEFAULT_NEIGHBORHOOD_HOPS = 2


@dataclass(frozen=True)
class Adjacency:
    """CSR index over train triples keyed by one endpoint.

    Row `e` lists, in train order, the other endpoint, the relation and the
    train row of every triple whose keyed endpoint is `e`.
    """
    indptr: np.ndarray
    neighbors: np.ndarray
    relations: np.ndarray
    edges: np.ndarray

    def row(self, entity):
        return slice(self.indptr[entity], self.indptr[entity + 1])

    def row_sizes(self):
        return np.diff(self.indptr)


@dataclass(frozen=True)
class KnowledgeGraph:
    entity_labels: tuple
    relation_labels: tuple
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    by_head: Adjacency
    by_tail: Adjacency
    entity_degree: np.ndarray
    relation_degree: np.ndarray
    train_keys: np.ndarray
    type_targets: tuple
    duplicates_removed: int = 0

    @property
    def entity_count(self):
        return len(self.entity_labels)

    @property
    def relation_count(self):
        return len(self.relation_labels)

    @property
    def type_count(self):
        return 2 * len(self.relation_labels)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split '{name}', expected one of {SPLITS}")
        return getattr(self, name)

    def encode(self, heads, relations, tails):
        heads = np.asarray(heads, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        return (heads * self.relation_count + relations) * self.entity_count + tails

    def contains(self, heads, relations, tails):
        """Vectorized membership test against the train split."""
        keys = self.encode(heads, relations, tails)
        if len(self.train_keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.train_keys, keys), len(self.train_keys) - 1)
        return self.train_keys[pos] == keys

    def neighbors(self, entity):
        return np.concatenate([self.by_head.neighbors[self.by_head.row(entity)],
                               self.by_tail.neighbors[self.by_tail.row(entity)]])

    @cached_property
    def _entity_ids(self):
        return {label: index for index, label in enumerate(self.entity_labels)}

    @cached_property
    def _relation_ids(self):
        return {label: index for index, label in enumerate(self.relation_labels)}

    def entity_id(self, label):
        if label not in self._entity_ids:
            raise VocabularyError(f"unknown entity label '{label}'")
        return self._entity_ids[label]

    def relation_id(self, label):
        if label not in self._relation_ids:
            raise VocabularyError(f"unknown relation label '{label}'")
        return self._relation_ids[label]


@dataclass(frozen=True)
class DegreePriors:
    entity: np.ndarray
    relation: np.ndarray


def _frozen(array):
    array.flags.writeable = False
    return array


def _csr(keys, others, relations, count):
    order = np.argsort(keys, kind='stable')
    indptr = np.zeros(count + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=count), out=indptr[1:])
    return Adjacency(indptr=_frozen(indptr),
                     neighbors=_frozen(others[order]),
                     relations=_frozen(relations[order]),
                     edges=_frozen(order.astype(np.int64)))


def _type_targets(train, entity_degree, relation_count):
    frame = pd.DataFrame(train, columns=TRIPLE_COLUMNS)
    forward = frame.groupby('relation')['tail'].unique()
    backward = frame.groupby('relation')['head'].unique()

    targets = []
    for directed_type in range(2 * relation_count):
        index = forward if directed_type < relation_count else backward
        relation = directed_type % relation_count
        entities = np.asarray(index.get(relation, []), dtype=np.int64)
        order = np.lexsort((entities, -entity_degree[entities]))
        targets.append(_frozen(entities[order]))
    return tuple(targets)


def _as_triples(triples):
    return np.asarray(triples, dtype=np.int64).reshape(-1, 3)


def build_graph(entity_labels, relation_labels, train, valid=(), test=(), duplicates_removed=0):
    """Index id-level splits. Train triples are expected to be unique already."""
    entity_count = len(entity_labels)
    relation_count = len(relation_labels)
    train = _as_triples(train)
    valid = _as_triples(valid)
    test = _as_triples(test)

    for name, triples in ((TRAIN, train), (VALID, valid), (TEST, test)):
        if len(triples) and (triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= entity_count):
            raise VocabularyError(f"{name} split references an entity outside [0, {entity_count})")
        if len(triples) and (triples[:, 1].min() < 0 or triples[:, 1].max() >= relation_count):
            raise VocabularyError(f"{name} split references a relation outside [0, {relation_count})")

    heads, relations, tails = train[:, 0], train[:, 1], train[:, 2]
    entity_degree = np.bincount(heads, minlength=entity_count) + np.bincount(tails, minlength=entity_count)
    relation_degree = np.bincount(relations, minlength=relation_count)
    keys = np.sort((heads * relation_count + relations) * entity_count + tails)

    return KnowledgeGraph(
        entity_labels=tuple(entity_labels),
        relation_labels=tuple(relation_labels),
        train=_frozen(train),
        valid=_frozen(valid),
        test=_frozen(test),
        by_head=_csr(heads, tails, relations, entity_count),
        by_tail=_csr(tails, heads, relations, entity_count),
        entity_degree=_frozen(entity_degree.astype(np.int64)),
        relation_degree=_frozen(relation_degree.astype(np.int64)),
        train_keys=_frozen(keys),
        type_targets=_type_targets(train, entity_degree, relation_count),
        duplicates_removed=duplicates_removed)


def from_triples(train, valid=(), test=(), entity_count=None, relation_count=None):
    """Build a graph straight from id triples, labelling every id by its number."""
    train = _as_triples(train)
    stacked = np.concatenate([train, _as_triples(valid), _as_triples(test)])
    if entity_count is None:
        entity_count = int(stacked[:, [0, 2]].max()) + 1 if len(stacked) else 0
    if relation_count is None:
        relation_count = int(stacked[:, 1].max()) + 1 if len(stacked) else 0

    unique = pd.DataFrame(train, columns=TRIPLE_COLUMNS).drop_duplicates(ignore_index=True)
    return build_graph([str(i) for i in range(entity_count)],
                       [str(i) for i in range(relation_count)],
                       unique.to_numpy(), valid, test,
                       duplicates_removed=len(train) - len(unique))


# Loading


def read_triples(path):
    rows = []
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip('\r\n')
            if not line.strip():
                continue
            fields = line.split('\t')
            if len(fields) != 3:
                raise TripleParseError(path, line_number, f"expected 3 tab-separated fields, found {len(fields)}")
            rows.append(fields)
    return pd.DataFrame(rows, columns=TRIPLE_COLUMNS, dtype=str)


def read_vocabulary(path):
    labels = {}
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip('\r\n')
            if not line.strip():
                continue
            fields = line.split('\t')
            if len(fields) != 2 or not fields[0].isdigit():
                raise VocabularyError(f"{path}:{line_number}: expected 'integer-id<TAB>label'")
            index = int(fields[0])
            if index in labels:
                raise VocabularyError(f"{path}:{line_number}: id {index} mapped twice")
            labels[index] = fields[1]

    if sorted(labels) != list(range(len(labels))):
        raise VocabularyError(f"{path}: ids are not dense over [0, {len(labels)})")
    ordered = [labels[i] for i in range(len(labels))]
    if len(set(ordered)) != len(ordered):
        raise VocabularyError(f"{path}: a label is mapped to more than one id")
    return ordered


def _map_split(frame, entity_index, relation_index, name, unknown):
    ids = np.stack([entity_index.get_indexer(frame['head']),
                    relation_index.get_indexer(frame['relation']),
                    entity_index.get_indexer(frame['tail'])], axis=1).astype(np.int64)
    missing = (ids < 0).any(axis=1)
    if missing.any():
        first = frame[missing].iloc[0]
        message = (f"{int(missing.sum())} {name} triple(s) use labels absent from the train vocabulary "
                   f"(first: {first['head']} {first['relation']} {first['tail']})")
        if name == TRAIN or unknown == UNKNOWN_ERROR:
            raise VocabularyError(message)
        logger.warning("%s; skipped", message)
    return ids[~missing]


def load_knowledge_graph(train_path, valid_path, test_path,
                         entity_vocab_path=None, relation_vocab_path=None, unknown=UNKNOWN_SKIP):
    if unknown not in UNKNOWN_POLICIES:
        raise ValueError(f"unknown-label policy must be one of {UNKNOWN_POLICIES}")

    train = read_triples(train_path)
    valid = read_triples(valid_path) if valid_path else pd.DataFrame(columns=TRIPLE_COLUMNS)
    test = read_triples(test_path) if test_path else pd.DataFrame(columns=TRIPLE_COLUMNS)

    before = len(train)
    train = train.drop_duplicates(ignore_index=True)
    duplicates = before - len(train)
    if duplicates:
        logger.warning("Removed %d duplicate train triple(s) from %s", duplicates, train_path)

    if entity_vocab_path:
        entity_labels = read_vocabulary(entity_vocab_path)
    else:
        entity_labels = list(pd.unique(train[['head', 'tail']].to_numpy().ravel()))
    if relation_vocab_path:
        relation_labels = read_vocabulary(relation_vocab_path)
    else:
        relation_labels = list(pd.unique(train['relation']))

    entity_index = pd.Index(entity_labels)
    relation_index = pd.Index(relation_labels)

    kg = build_graph(entity_labels, relation_labels,
                     _map_split(train, entity_index, relation_index, TRAIN, unknown),
                     _map_split(valid, entity_index, relation_index, VALID, unknown),
                     _map_split(test, entity_index, relation_index, TEST, unknown),
                     duplicates_removed=duplicates)
    logger.info("Loaded graph: %d entities, %d relations, %d/%d/%d train/valid/test triples",
                kg.entity_count, kg.relation_count, len(kg.train), len(kg.valid), len(kg.test))
    return kg


def write_split(kg, split, path):
    entities = np.asarray(kg.entity_labels, dtype=object)
    relations = np.asarray(kg.relation_labels, dtype=object)
    triples = kg.split(split)
    with open(path, 'w', encoding='utf-8') as f:
        for h, r, t in zip(entities[triples[:, 0]], relations[triples[:, 1]], entities[triples[:, 2]]):
            f.write(f"{h}\t{r}\t{t}\n")


def write_vocabularies(kg, entity_path, relation_path):
    for path, labels in ((entity_path, kg.entity_labels), (relation_path, kg.relation_labels)):
        with open(path, 'w', encoding='utf-8') as f:
            for index, label in enumerate(labels):
                f.write(f"{index}\t{label}\n")


# Queries over the graph


def degree_priors(kg, smoothing=DEFAULT_PRIOR_SMOOTHING):
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")

    def normalize(degrees):
        weights = degrees.astype(np.float64) + smoothing
        total = weights.sum()
        if total == 0:
            return np.full(len(weights), 1.0 / max(len(weights), 1))
        return weights / total

    return DegreePriors(entity=normalize(kg.entity_degree), relation=normalize(kg.relation_degree))


def observed_types(kg, entity):
    """Directed relation types leaving `entity` in the train graph."""
    entity = check_entity(entity, kg.entity_count)
    outgoing = kg.by_head.relations[kg.by_head.row(entity)]
    incoming = kg.by_tail.relations[kg.by_tail.row(entity)] + kg.relation_count
    return np.unique(np.concatenate([outgoing, incoming]))


def type_targets(kg, directed_type):
    return kg.type_targets[directed_type]


def k_hop_neighborhood(kg, entity, hops=DEFAULT_NEIGHBORHOOD_HOPS, cap=None):
    entity = check_entity(entity, kg.entity_count)
    if hops < 1:
        raise ValueError("hops must be at least 1")
    if cap is not None and cap < 1:
        raise ValueError("cap must be at least 1")

    visited = np.zeros(kg.entity_count, dtype=bool)
    visited[entity] = True
    frontier = np.array([entity], dtype=np.int64)
    collected = []
    size = 0

    for _ in range(hops):
        reached = np.unique(np.concatenate([kg.neighbors(u) for u in frontier]))
        reached = reached[~visited[reached]]
        if cap is not None and len(reached) > cap - size:
            # Keep the rarest neighbors first
            order = np.lexsort((reached, kg.entity_degree[reached]))
            reached = np.sort(reached[order[:cap - size]])
        visited[reached] = True
        collected.append(reached)
        size += len(reached)
        frontier = reached
        if not len(frontier) or (cap is not None and size >= cap):
            break

    return np.sort(np.concatenate(collected))


# Summaries


def degree_histogram(kg):
    histogram = OrderedDict()
    degrees = kg.entity_degree
    histogram['0'] = int((degrees == 0).sum())
    upper = int(degrees.max()) if len(degrees) else 0
    low = 1
    while low <= upper:
        high = 2 * low - 1
        label = str(low) if low == high else f"{low}-{high}"
        histogram[label] = int(((degrees >= low) & (degrees <= high)).sum())
        low *= 2
    return histogram


def summarize(kg):
    degrees = kg.entity_degree
    summary = OrderedDict()
    summary['entities'] = kg.entity_count
    summary['relations'] = kg.relation_count
    summary['splits'] = OrderedDict((name, len(kg.split(name))) for name in SPLITS)
    summary['duplicatesRemoved'] = kg.duplicates_removed

    degree = OrderedDict()
    degree['min'] = int(degrees.min()) if len(degrees) else 0
    degree['max'] = int(degrees.max()) if len(degrees) else 0
    degree['mean'] = float(degrees.mean()) if len(degrees) else 0.0
    degree['median'] = float(np.median(degrees)) if len(degrees) else 0.0
    degree['histogram'] = degree_histogram(kg)
    summary['degree'] = degree
    return summary
