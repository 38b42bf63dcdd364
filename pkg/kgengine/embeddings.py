"""Entity embedding tables.

A table either stores every entity row directly (`FullTable`, |E| x d) or
factorizes the entity matrix as Z = Z_d . W (`LowRankTable`, |E| x r and
r x d). Both hand out materialized rows of length d and route gradients
taken w.r.t. materialized rows back to their own parameters.
"""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from kgengine.common import check_entity

FULL = 'full'
LOW_RANK = 'low_rank'


@dataclass
class Gradient:
    """Gradient of one parameter array; `rows` is None for a dense gradient."""
    rows: object
    values: np.ndarray


def aggregate_rows(ids, grads):
    rows, inverse = np.unique(np.asarray(ids, dtype=np.int64), return_inverse=True)
    summed = np.zeros((len(rows), grads.shape[1]), dtype=np.float64)
    np.add.at(summed, inverse.reshape(-1), grads)
    return Gradient(rows=rows, values=summed)


class FullTable:
    variant = FULL

    def __init__(self, weight):
        self.weight = weight

    @property
    def entity_count(self):
        return self.weight.shape[0]

    @property
    def dim(self):
        return self.weight.shape[1]

    @property
    def rank(self):
        return 0

    @property
    def dtype(self):
        return self.weight.dtype

    def param_count(self):
        return self.entity_count * self.dim

    def parameters(self):
        return OrderedDict([('entity', self.weight)])

    def materialize(self, ids):
        return self.weight[np.asarray(ids, dtype=np.int64)]

    def backward(self, ids, row_grads):
        return OrderedDict([('entity', aggregate_rows(ids, row_grads))])


class LowRankTable:
    variant = LOW_RANK

    def __init__(self, factors, basis, allow_identity=False):
        rank, dim = basis.shape
        if factors.shape[1] != rank:
            raise ValueError(f"factor width {factors.shape[1]} does not match basis rank {rank}")
        if rank > dim or (rank == dim and not allow_identity):
            raise ValueError(f"low-rank entity tables need r < d (Z = Z_d * W), got r={rank}, d={dim}")
        self.factors = factors
        self.basis = basis

    @property
    def entity_count(self):
        return self.factors.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def rank(self):
        return self.basis.shape[0]

    @property
    def dtype(self):
        return self.factors.dtype

    def param_count(self):
        return self.entity_count * self.rank + self.rank * self.dim

    def parameters(self):
        return OrderedDict([('entity_factors', self.factors), ('entity_basis', self.basis)])

    def materialize(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return self.factors[ids].astype(np.float64) @ self.basis.astype(np.float64)

    def backward(self, ids, row_grads):
        ids = np.asarray(ids, dtype=np.int64)
        basis = self.basis.astype(np.float64)
        factor_rows = aggregate_rows(ids, row_grads @ basis.T)
        # W is shared: its gradient is summed over the whole batch at once
        basis_grad = self.factors[ids].astype(np.float64).T @ row_grads
        return OrderedDict([('entity_factors', factor_rows),
                            ('entity_basis', Gradient(rows=None, values=basis_grad))])


def make_table(entity_count, dim, rank, bound, rng, dtype=np.float32, allow_identity=False):
    """Initialize a table with entries drawn uniformly from [-bound, bound].

    For the low-rank variant the basis is drawn from [-sqrt(3/r), sqrt(3/r)]
    so that materialized rows keep the variance of a full table.
    """
    if not rank:
        weight = rng.uniform(-bound, bound, size=(entity_count, dim)).astype(dtype)
        return FullTable(weight)

    factors = rng.uniform(-bound, bound, size=(entity_count, rank)).astype(dtype)
    limit = np.sqrt(3.0 / rank)
    basis = rng.uniform(-limit, limit, size=(rank, dim)).astype(dtype)
    return LowRankTable(factors, basis, allow_identity=allow_identity)


def materialize_entity(table, entity_id):
    entity_id = check_entity(entity_id, table.entity_count)
    return np.array(table.materialize([entity_id])[0])
