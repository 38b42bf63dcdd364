"""Binary checkpoints for scoring models ("PIEK") and typing networks ("PIET").

Both formats are a fixed little-endian header followed by float32 parameter
arrays in declaration order, with no padding and no trailing data.

PIEK header: magic, version u32, kind u8, variant u8, |E| u64, |R| u64,
d u32, r u32, gamma f64. Arrays: entity table (or factors then basis), then
relations.

PIET header: magic, version u32, K u32, |R| u32, h_edge u32, h_node u32.
Arrays: edge embedding, then weight and bias of each edge transformation,
then output weight and output bias.
"""
import logging
import os
import struct

import numpy as np

from kgengine.common import CheckpointError
from kgengine.embeddings import FULL, LOW_RANK, FullTable, LowRankTable
from kgengine.models import (COMPLEX, DISTMULT, PAIRRE, ROTATE, SCORERS,
                             TRANSE, ScoringModel)
from kgengine.typing_model import TypingNetwork

logger = logging.getLogger(__name__)

KGE_MAGIC = b'PIEK'
TYPING_MAGIC = b'PIET'
VERSION = 1

KGE_HEADER = struct.Struct('<4sIBBQQIId')
TYPING_HEADER = struct.Struct('<4sIIIII')
FLOAT = np.dtype('<f4')

BAD_MAGIC = "bad magic"
UNSUPPORTED_VERSION = "unsupported version"
TRUNCATED = "truncated"
TRAILING_DATA = "trailing data"
KIND_MISMATCH = "kind mismatch"

# (kind, TransE norm) <-> code
KIND_CODES = {
    (TRANSE, 1): 0,
    (COMPLEX, 1): 1,
    (PAIRRE, 1): 2,
    (ROTATE, 1): 3,
    (DISTMULT, 1): 4,
    (TRANSE, 2): 5,
}
CODE_KINDS = {code: key for key, code in KIND_CODES.items()}
VARIANT_CODES = {FULL: 0, LOW_RANK: 1}
CODE_VARIANTS = {code: variant for variant, code in VARIANT_CODES.items()}


def _kind_code(model):
    norm = model.norm if model.kind == TRANSE else 1
    return KIND_CODES[(model.kind, norm)]


def _write_arrays(f, arrays):
    for array in arrays:
        f.write(np.ascontiguousarray(array, dtype=FLOAT).tobytes())


class _Reader:

    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def unpack(self, header):
        if len(self.data) - self.offset < header.size:
            raise CheckpointError(TRUNCATED, self.path)
        fields = header.unpack_from(self.data, self.offset)
        self.offset += header.size
        return fields

    def array(self, *shape):
        count = int(np.prod(shape))
        size = count * FLOAT.itemsize
        if len(self.data) - self.offset < size:
            raise CheckpointError(TRUNCATED, self.path)
        array = np.frombuffer(self.data, dtype=FLOAT, count=count, offset=self.offset).reshape(shape)
        self.offset += size
        return array.astype(np.float32)

    def finish(self):
        if self.offset != len(self.data):
            raise CheckpointError(TRAILING_DATA, self.path)


def _read_file(path):
    if not os.path.exists(path):
        raise CheckpointError("missing checkpoint", path)
    with open(path, 'rb') as f:
        return f.read()


def _check_preamble(reader, magic):
    if len(reader.data) < 8:
        if reader.data[:4] != magic[:len(reader.data)]:
            raise CheckpointError(BAD_MAGIC, reader.path)
        raise CheckpointError(TRUNCATED, reader.path)
    found, version = struct.unpack_from('<4sI', reader.data)
    if found != magic:
        raise CheckpointError(BAD_MAGIC, reader.path)
    if version != VERSION:
        raise CheckpointError(UNSUPPORTED_VERSION, reader.path)


def save_checkpoint(model, path):
    table = model.table
    header = KGE_HEADER.pack(KGE_MAGIC, VERSION, _kind_code(model), VARIANT_CODES[table.variant],
                             model.entity_count, model.relation_count, model.dim, table.rank, model.gamma)
    with open(path, 'wb') as f:
        f.write(header)
        _write_arrays(f, list(table.parameters().values()) + [model.relations])
    logger.info("Saved %s checkpoint (%s, %d parameters) to %s", model.kind, table.variant,
                model.param_count(), path)


def load_checkpoint(path):
    reader = _Reader(_read_file(path), path)
    _check_preamble(reader, KGE_MAGIC)
    _, _, kind_code, variant_code, entity_count, relation_count, dim, rank, gamma = reader.unpack(KGE_HEADER)
    if kind_code not in CODE_KINDS or variant_code not in CODE_VARIANTS:
        raise CheckpointError(KIND_MISMATCH, path)
    kind, norm = CODE_KINDS[kind_code]

    if CODE_VARIANTS[variant_code] == FULL:
        table = FullTable(reader.array(entity_count, dim))
    else:
        factors = reader.array(entity_count, rank)
        basis = reader.array(rank, dim)
        table = LowRankTable(factors, basis, allow_identity=rank == dim)
    relations = reader.array(relation_count, SCORERS[kind].relation_dim(dim))
    reader.finish()
    return ScoringModel(kind, table, relations, gamma=gamma, norm=norm)


def save_typing_checkpoint(network, path):
    header = TYPING_HEADER.pack(TYPING_MAGIC, VERSION, network.layers, network.relation_count,
                                network.edge_dim, network.node_dim)
    with open(path, 'wb') as f:
        f.write(header)
        _write_arrays(f, network.parameters().values())
    logger.info("Saved typing network (K=%d, %d parameters) to %s", network.layers,
                network.param_count(), path)


def load_typing_checkpoint(path):
    reader = _Reader(_read_file(path), path)
    _check_preamble(reader, TYPING_MAGIC)
    _, _, layers, relation_count, edge_dim, node_dim = reader.unpack(TYPING_HEADER)
    if layers < 1 or node_dim != edge_dim:
        raise CheckpointError(KIND_MISMATCH, path)

    edge_embedding = reader.array(2 * relation_count, edge_dim)
    weights, biases = [], []
    for _ in range(layers - 1):
        weights.append(reader.array(2 * node_dim + edge_dim, edge_dim))
        biases.append(reader.array(edge_dim))
    output_weight = reader.array(layers * node_dim, 2 * relation_count)
    output_bias = reader.array(2 * relation_count)
    reader.finish()
    return TypingNetwork(relation_count, layers, edge_dim, node_dim,
                         edge_embedding, weights, biases, output_weight, output_bias)
