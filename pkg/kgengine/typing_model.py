"""Self-supervised fine-grained entity typing.

An entity's type is the distribution p(r|e) over the directed relation types
that can leave it. The network reads only the relation types of a local
subgraph around the entity: edge states start from a learned embedding of the
edge's type, node messages are sums of the states of the edges leaving the
node, and each round rebuilds edge states from [m_src, m_dst, s_e]. The
target representation concatenates the target's message from every round.

Directed types live in [0, 2|R|): a train triple (h, r, t) leaves h with
type r and leaves t with type r + |R|.
"""
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp, softmax
from tqdm import tqdm

from kgengine.common import (TRAIN, DivergenceError, EmptySubgraphError,
                             check_entity)
from kgengine.embeddings import Gradient, aggregate_rows
from kgengine.graph import observed_types
from kgengine.metrics import pessimistic_rank
from kgengine.optim import make_optimizer

logger = logging.getLogger(__name__)

RANKING = 'ranking'
SOFTMAX = 'softmax'
TYPING_LOSSES = (RANKING, SOFTMAX)

DEFAULT_LAYERS = 2
DEFAULT_HIDDEN = 64
DEFAULT_HOPS = 2
DEFAULT_PER_TYPE_CAP = 10
DEFAULT_SCALE = 2.0
DEFAULT_MARGIN = 0.1
TYPING_HITS = 5


@dataclass
class RelationalSubgraph:
    """Local node list (target first) and directed, type-labelled edges."""
    target: int
    nodes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    types: np.ndarray
    relation_count: int
    masked_types: frozenset = frozenset()

    @property
    def edge_count(self):
        return len(self.types)

    def directed_edges(self):
        return [(int(self.nodes[u]), int(self.nodes[v]), int(k))
                for u, v, k in zip(self.src, self.dst, self.types)]


class MaskedExample(NamedTuple):
    subgraph: RelationalSubgraph
    observed: np.ndarray
    masked_type: int


@dataclass
class TypingConfig:
    hops: int = DEFAULT_HOPS
    per_type_cap: int = DEFAULT_PER_TYPE_CAP
    scale: float = DEFAULT_SCALE
    margin: float = DEFAULT_MARGIN
    loss: str = RANKING
    batch_size: int = 64
    learning_rate: float = 0.01
    optimizer: str = 'adagrad'
    epochs: int = 20

    def validate(self):
        if self.hops < 1 or self.per_type_cap < 1:
            raise ValueError("hops and per_type_cap must be at least 1")
        if self.scale <= 0:
            raise ValueError("the ranking-loss scale must be positive")
        if self.loss not in TYPING_LOSSES:
            raise ValueError(f"typing loss must be one of {TYPING_LOSSES}")
        if self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("batch_size must be >= 1 and learning_rate >= 0")
        return self


@dataclass
class TypingEpochStats:
    epoch: int
    loss: float
    examples: int
    skipped: int
    wall_ms: float

    def to_record(self):
        return OrderedDict([('epoch', self.epoch), ('loss', self.loss), ('examples', self.examples),
                            ('skipped', self.skipped), ('wall_ms', self.wall_ms)])


@dataclass
class TypingMetrics:
    split: str
    mrr: float
    hits_at_5: float
    queries: int

    def to_document(self):
        return OrderedDict([('split', self.split), ('mrr', self.mrr),
                            ('hits', OrderedDict([(str(TYPING_HITS), self.hits_at_5)])),
                            ('queries', self.queries)])


# Network


def _glorot(rng, rows, cols, dtype):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)


class TypingNetwork:
    """Parameters of the relational message-passing typing model.

    `layers` is the number of message snapshots concatenated at the target,
    so `layers - 1` edge transformations sit between them.
    """

    def __init__(self, relation_count, layers, edge_dim, node_dim,
                 edge_embedding, weights, biases, output_weight, output_bias):
        if layers < 1:
            raise ValueError("the typing network needs at least one layer")
        if node_dim != edge_dim:
            raise ValueError("node messages are sums of edge states, so node_dim must equal edge_dim")
        if len(weights) != layers - 1 or len(biases) != layers - 1:
            raise ValueError(f"expected {layers - 1} edge transformations")
        self.relation_count = relation_count
        self.layers = layers
        self.edge_dim = edge_dim
        self.node_dim = node_dim
        self.edge_embedding = edge_embedding
        self.weights = list(weights)
        self.biases = list(biases)
        self.output_weight = output_weight
        self.output_bias = output_bias

    @classmethod
    def initialize(cls, relation_count, layers=DEFAULT_LAYERS, edge_dim=DEFAULT_HIDDEN,
                   node_dim=DEFAULT_HIDDEN, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        type_count = 2 * relation_count
        edge_embedding = _glorot(rng, type_count, edge_dim, dtype)
        weights = [_glorot(rng, 2 * node_dim + edge_dim, edge_dim, dtype) for _ in range(layers - 1)]
        biases = [np.zeros(edge_dim, dtype=dtype) for _ in range(layers - 1)]
        output_weight = _glorot(rng, layers * node_dim, type_count, dtype)
        output_bias = np.zeros(type_count, dtype=dtype)
        return cls(relation_count, layers, edge_dim, node_dim,
                   edge_embedding, weights, biases, output_weight, output_bias)

    @property
    def type_count(self):
        return 2 * self.relation_count

    def parameters(self):
        params = OrderedDict([('edge_embedding', self.edge_embedding)])
        for i, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            params[f'weight_{i}'] = weight
            params[f'bias_{i}'] = bias
        params['output_weight'] = self.output_weight
        params['output_bias'] = self.output_bias
        return params

    def param_count(self):
        return sum(p.size for p in self.parameters().values())


# Subgraph extraction and masking


def _sample_per_type(types, cap, rng):
    keep = []
    for directed_type in np.unique(types):
        index = np.flatnonzero(types == directed_type)
        if len(index) > cap:
            index = np.sort(rng.choice(index, size=cap, replace=False)) if rng is not None else index[:cap]
        keep.append(index)
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def _canonical(src, dst, types):
    order = np.lexsort((types, dst, src))
    return src[order], dst[order], types[order]


def extract_relational_subgraph(kg, entity, hops=DEFAULT_HOPS, per_type_cap=DEFAULT_PER_TYPE_CAP, rng=None):
    """Breadth-first subgraph keeping at most `per_type_cap` edges per incident type at each node."""
    entity = check_entity(entity, kg.entity_count)
    if hops < 1 or per_type_cap < 1:
        raise ValueError("hops and per_type_cap must be at least 1")
    relation_count = kg.relation_count

    local = {entity: 0}
    nodes = [entity]
    kept = {}
    frontier = [entity]
    for _ in range(hops):
        reached = []
        for u in frontier:
            out_rows, in_rows = kg.by_head.row(u), kg.by_tail.row(u)
            edges = np.concatenate([kg.by_head.edges[out_rows], kg.by_tail.edges[in_rows]])
            others = np.concatenate([kg.by_head.neighbors[out_rows], kg.by_tail.neighbors[in_rows]])
            types = np.concatenate([kg.by_head.relations[out_rows],
                                    kg.by_tail.relations[in_rows] + relation_count])
            for i in _sample_per_type(types, per_type_cap, rng):
                kept.setdefault(int(edges[i]), None)
                v = int(others[i])
                if v not in local:
                    local[v] = len(nodes)
                    nodes.append(v)
                    reached.append(v)
        frontier = reached
        if not frontier:
            break

    triples = kg.train[np.fromiter(kept, dtype=np.int64, count=len(kept))]
    heads = np.array([local[h] for h in triples[:, 0]], dtype=np.int64)
    tails = np.array([local[t] for t in triples[:, 2]], dtype=np.int64)
    src, dst, types = _canonical(np.concatenate([heads, tails]),
                                 np.concatenate([tails, heads]),
                                 np.concatenate([triples[:, 1], triples[:, 1] + relation_count]))
    return RelationalSubgraph(target=entity, nodes=np.array(nodes, dtype=np.int64),
                              src=src, dst=dst, types=types, relation_count=relation_count)


def mask_types(subgraph, types):
    """Drop every target edge of the given directed types together with its reverse edge."""
    types = np.asarray(sorted(set(int(k) for k in types)), dtype=np.int64)
    reverse = (types + subgraph.relation_count) % (2 * subgraph.relation_count)
    drop = ((subgraph.src == 0) & np.isin(subgraph.types, types)) | \
           ((subgraph.dst == 0) & np.isin(subgraph.types, reverse))
    keep = ~drop
    return RelationalSubgraph(target=subgraph.target, nodes=subgraph.nodes,
                              src=subgraph.src[keep], dst=subgraph.dst[keep], types=subgraph.types[keep],
                              relation_count=subgraph.relation_count,
                              masked_types=subgraph.masked_types | frozenset(int(k) for k in types))


def apply_relation_mask(subgraph, kg, rng):
    """Hide one observed type of the target; returns None when fewer than two types are observed."""
    observed = observed_types(kg, subgraph.target)
    if len(observed) < 2:
        return None
    masked_type = int(rng.choice(observed))
    return MaskedExample(mask_types(subgraph, [masked_type]), observed, masked_type)


def unobserved_types(observed, type_count):
    return np.setdiff1d(np.arange(type_count), observed)


# Forward and backward


@dataclass
class SubgraphBatch:
    src: np.ndarray
    dst: np.ndarray
    types: np.ndarray
    targets: np.ndarray
    node_count: int
    src_incidence: sp.csr_matrix
    dst_incidence: sp.csr_matrix


def collate(subgraphs):
    """Disjoint union of subgraphs; edges in canonical (src, dst, type) order."""
    offsets = np.cumsum([0] + [len(sg.nodes) for sg in subgraphs])
    src = np.concatenate([sg.src + off for sg, off in zip(subgraphs, offsets)] + [np.zeros(0, np.int64)])
    dst = np.concatenate([sg.dst + off for sg, off in zip(subgraphs, offsets)] + [np.zeros(0, np.int64)])
    types = np.concatenate([sg.types for sg in subgraphs] + [np.zeros(0, np.int64)])
    src, dst, types = _canonical(src.astype(np.int64), dst.astype(np.int64), types.astype(np.int64))

    node_count = int(offsets[-1])
    columns = np.arange(len(types))
    ones = np.ones(len(types))
    return SubgraphBatch(
        src=src, dst=dst, types=types,
        targets=offsets[:-1].astype(np.int64),
        node_count=node_count,
        src_incidence=sp.csr_matrix((ones, (src, columns)), shape=(node_count, len(types))),
        dst_incidence=sp.csr_matrix((ones, (dst, columns)), shape=(node_count, len(types))))


@dataclass
class ForwardCache:
    states: list
    messages: list
    inputs: list
    preactivations: list
    hidden: np.ndarray


def network_forward(network, batch):
    """Logits of shape (subgraphs, 2|R|) and the cache needed by `typing_backward`."""
    state = network.edge_embedding[batch.types].astype(np.float64)
    states, messages, inputs, preactivations = [], [], [], []
    for i in range(network.layers):
        message = np.asarray(batch.src_incidence @ state)
        states.append(state)
        messages.append(message)
        if i == network.layers - 1:
            break
        x = np.concatenate([message[batch.src], message[batch.dst], state], axis=1)
        z = x @ network.weights[i].astype(np.float64) + network.biases[i]
        inputs.append(x)
        preactivations.append(z)
        state = np.maximum(z, 0.0)

    hidden = np.concatenate([message[batch.targets] for message in messages], axis=1)
    logits = hidden @ network.output_weight.astype(np.float64) + network.output_bias
    return logits, ForwardCache(states, messages, inputs, preactivations, hidden)


def typing_backward(network, batch, cache, dlogits):
    """Gradients of sum(dlogits * logits) w.r.t. every network parameter."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    width = network.node_dim
    grads = {
        'output_weight': Gradient(None, cache.hidden.T @ dlogits),
        'output_bias': Gradient(None, dlogits.sum(axis=0)),
    }
    dhidden = dlogits @ network.output_weight.astype(np.float64).T

    dstate_next = None
    for i in reversed(range(network.layers)):
        state = cache.states[i]
        dmessage = np.zeros_like(cache.messages[i])
        dmessage[batch.targets] += dhidden[:, i * width:(i + 1) * width]
        dstate = np.zeros_like(state)
        if i < network.layers - 1:
            dz = dstate_next * (cache.preactivations[i] > 0)
            grads[f'weight_{i}'] = Gradient(None, cache.inputs[i].T @ dz)
            grads[f'bias_{i}'] = Gradient(None, dz.sum(axis=0))
            dx = dz @ network.weights[i].astype(np.float64).T
            dmessage += np.asarray(batch.src_incidence @ dx[:, :width])
            dmessage += np.asarray(batch.dst_incidence @ dx[:, width:2 * width])
            dstate += dx[:, 2 * width:]
        dstate += dmessage[batch.src]
        dstate_next = dstate

    grads['edge_embedding'] = aggregate_rows(batch.types, dstate_next)
    return OrderedDict((name, grads[name]) for name in network.parameters())


def typing_forward(network, subgraph, allow_empty=False):
    """Relation-type logits for the subgraph's target.

    A subgraph without edges has no defined target message; inference passes
    allow_empty=True and gets the bias-driven logits of a zero message.
    """
    if subgraph.edge_count == 0 and not allow_empty:
        raise EmptySubgraphError(f"subgraph of entity {subgraph.target} has no edge")
    logits, _ = network_forward(network, collate([subgraph]))
    return logits[0]


def typing_probabilities(logits):
    return softmax(np.asarray(logits, dtype=np.float64), axis=-1)


# Losses


def ranking_loss(logits, observed, scale=DEFAULT_SCALE, margin=DEFAULT_MARGIN):
    """Pairwise observed-vs-unobserved ranking loss and its gradient w.r.t. the logits.

    log[1 + sum_j exp(scale (s_j + m)) * sum_i exp(-scale s_i)], j unobserved, i observed.
    """
    logits = np.asarray(logits, dtype=np.float64)
    observed_mask = np.zeros(len(logits), dtype=bool)
    observed_mask[np.asarray(observed, dtype=np.int64)] = True
    if not observed_mask.any():
        raise ValueError("ranking_loss needs at least one observed type")
    grad = np.zeros_like(logits)
    unobserved_mask = ~observed_mask
    if not unobserved_mask.any():
        return 0.0, grad

    positive = scale * (logits[unobserved_mask] + margin)
    negative = -scale * logits[observed_mask]
    exponent = logsumexp(positive) + logsumexp(negative)
    loss = float(np.logaddexp(0.0, exponent))
    weight = expit(exponent)
    grad[unobserved_mask] = weight * scale * softmax(positive)
    grad[observed_mask] = -weight * scale * softmax(negative)
    return loss, grad


def softmax_loss(logits, masked_type):
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= masked_type < len(logits):
        raise ValueError(f"masked type {masked_type} outside [0, {len(logits)})")
    loss = float(logsumexp(logits) - logits[masked_type])
    grad = softmax(logits)
    grad[masked_type] -= 1.0
    return loss, grad


# Training and evaluation


def train_typing_epoch(network, kg, config, rng, optimizer=None, epoch=1, mask_rng=None):
    """One shuffled pass over entities with at least one train edge.

    `rng` orders entities and subsamples edges; `mask_rng` picks the masked type
    and defaults to `rng`.
    """
    mask_rng = mask_rng if mask_rng is not None else rng
    config.validate()
    optimizer = optimizer if optimizer is not None else make_optimizer(config.optimizer, config.learning_rate)
    start = time.perf_counter()

    entities = rng.permutation(np.flatnonzero(kg.entity_degree > 0))
    losses, examples, skipped = [], 0, 0
    for offset in range(0, len(entities), config.batch_size):
        batch_examples = []
        for entity in entities[offset:offset + config.batch_size]:
            subgraph = extract_relational_subgraph(kg, entity, config.hops, config.per_type_cap, rng)
            example = apply_relation_mask(subgraph, kg, mask_rng)
            if example is None:
                skipped += 1
                continue
            batch_examples.append(example)
        if not batch_examples:
            continue

        batch = collate([example.subgraph for example in batch_examples])
        logits, cache = network_forward(network, batch)
        dlogits = np.zeros_like(logits)
        batch_loss = 0.0
        for i, example in enumerate(batch_examples):
            if config.loss == RANKING:
                loss, grad = ranking_loss(logits[i], example.observed, config.scale, config.margin)
            else:
                loss, grad = softmax_loss(logits[i], example.masked_type)
            batch_loss += loss
            dlogits[i] = grad
        batch_loss /= len(batch_examples)
        if not np.isfinite(batch_loss):
            raise DivergenceError(f"typing loss became {batch_loss} in epoch {epoch} "
                                  f"(batch starting at entity offset {offset})")

        optimizer.step(network.parameters(), typing_backward(network, batch, cache, dlogits / len(batch_examples)))
        losses.append(batch_loss)
        examples += len(batch_examples)
        logger.debug("typing epoch %d offset %d loss %.6f", epoch, offset, batch_loss)

    return TypingEpochStats(epoch=epoch,
                            loss=float(np.mean(losses)) if losses else 0.0,
                            examples=examples, skipped=skipped,
                            wall_ms=(time.perf_counter() - start) * 1000.0)


def train_typing(network, kg, config, rng, on_epoch=None, mask_rng=None):
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        stats = train_typing_epoch(network, kg, config, rng, optimizer, epoch, mask_rng)
        logger.info("typing epoch %d: loss %.6f, %d examples, %d skipped", epoch, stats.loss,
                    stats.examples, stats.skipped)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return history


def evaluate_typing(network, kg, split, hops=DEFAULT_HOPS, per_type_cap=DEFAULT_PER_TYPE_CAP,
                    rng=None, batch_size=256):
    """Rank each triple's relation among the head's directed types, filtering its other train types."""
    if split == TRAIN:
        raise ValueError("typing is evaluated on the valid or test split")
    triples = kg.split(split)
    ranks = []
    for offset in tqdm(range(0, len(triples), batch_size), desc="Typing evaluation", disable=len(triples) < batch_size):
        chunk = triples[offset:offset + batch_size]
        subgraphs = [mask_types(extract_relational_subgraph(kg, h, hops, per_type_cap, rng), [r])
                     for h, r, _ in chunk]
        logits, _ = network_forward(network, collate(subgraphs))
        for scores, (h, r, _) in zip(logits, chunk):
            others = observed_types(kg, h)
            scores[others[others != r]] = -np.inf
            ranks.append(pessimistic_rank(scores, scores[r]))

    ranks = np.asarray(ranks, dtype=np.float64)
    return TypingMetrics(split=split,
                         mrr=float((1.0 / ranks).mean()) if len(ranks) else 0.0,
                         hits_at_5=float((ranks <= TYPING_HITS).mean()) if len(ranks) else 0.0,
                         queries=len(ranks))


def typing_table(network, kg, entities=None, hops=DEFAULT_HOPS, per_type_cap=DEFAULT_PER_TYPE_CAP,
                 seed=0, batch_size=256, progress=False):
    """p(type | e) for each requested entity (all by default), rows in request order.

    Each entity's subgraph is sampled from its own seeded stream, so a row does
    not depend on which other entities share its batch.
    """
    entities = np.arange(kg.entity_count) if entities is None else np.asarray(entities, dtype=np.int64)
    table = np.zeros((len(entities), network.type_count), dtype=np.float32)
    for offset in tqdm(range(0, len(entities), batch_size), desc="Typing entities", disable=not progress):
        chunk = entities[offset:offset + batch_size]
        subgraphs = [extract_relational_subgraph(kg, e, hops, per_type_cap, np.random.default_rng([seed, int(e)]))
                     for e in chunk]
        logits, _ = network_forward(network, collate(subgraphs))
        table[offset:offset + len(chunk)] = typing_probabilities(logits)
    return table
