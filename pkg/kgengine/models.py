"""Scoring models f_r(h, t) over an entity table and a relation matrix.

Every kind maps materialized head/tail rows and relation rows to a score where
higher means more plausible, and returns the analytic partial derivatives of
that score. Complex-valued kinds interleave real and imaginary parts
(even positions real, odd positions imaginary).
"""
import logging
from collections import OrderedDict

import numpy as np

from kgengine.common import HEAD, TAIL, check_entity, check_relation
from kgengine.embeddings import aggregate_rows, make_table

logger = logging.getLogger(__name__)

TRANSE = 'TransE'
DISTMULT = 'DistMult'
COMPLEX = 'ComplEx'
ROTATE = 'RotatE'
PAIRRE = 'PairRE'
MODEL_KINDS = (TRANSE, DISTMULT, COMPLEX, ROTATE, PAIRRE)

DEFAULT_GAMMA = 12.0


def canonical_kind(kind):
    for name in MODEL_KINDS:
        if name.lower() == str(kind).lower():
            return name
    raise ValueError(f"unknown model kind '{kind}', expected one of {MODEL_KINDS}")


def _split_complex(x):
    return x[..., 0::2], x[..., 1::2]


def _join_complex(re, im):
    out = np.empty(re.shape[:-1] + (2 * re.shape[-1],), dtype=np.float64)
    out[..., 0::2] = re
    out[..., 1::2] = im
    return out


class TransE:

    @staticmethod
    def relation_dim(dim):
        return dim

    @staticmethod
    def score(model, h, r, t):
        residual = h + r - t
        if model.norm == 1:
            return model.gamma - np.abs(residual).sum(axis=-1)
        return model.gamma - np.sqrt((residual ** 2).sum(axis=-1))

    @staticmethod
    def gradient(model, h, r, t):
        residual = h + r - t
        if model.norm == 1:
            g = -np.sign(residual)
        else:
            distance = np.sqrt((residual ** 2).sum(axis=-1, keepdims=True))
            g = -np.divide(residual, distance, out=np.zeros_like(residual), where=distance > 0)
        return g, g, -g


class DistMult:

    @staticmethod
    def relation_dim(dim):
        return dim

    @staticmethod
    def score(model, h, r, t):
        return (h * r * t).sum(axis=-1)

    @staticmethod
    def gradient(model, h, r, t):
        return r * t, h * t, h * r


class ComplEx:

    @staticmethod
    def relation_dim(dim):
        return dim

    @staticmethod
    def score(model, h, r, t):
        hr, hi = _split_complex(h)
        rr, ri = _split_complex(r)
        tr, ti = _split_complex(t)
        return (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(axis=-1)

    @staticmethod
    def gradient(model, h, r, t):
        hr, hi = _split_complex(h)
        rr, ri = _split_complex(r)
        tr, ti = _split_complex(t)
        gh = _join_complex(rr * tr + ri * ti, rr * ti - ri * tr)
        gr = _join_complex(hr * tr + hi * ti, hr * ti - hi * tr)
        gt = _join_complex(hr * rr - hi * ri, hi * rr + hr * ri)
        return gh, gr, gt


class RotatE:
    """Relations are phases; a relation row of length d/2 rotates every complex coordinate."""

    @staticmethod
    def relation_dim(dim):
        return dim // 2

    @staticmethod
    def _residual(model, h, r, t):
        hr, hi = _split_complex(h)
        tr, ti = _split_complex(t)
        phase = r * model.phase_scale
        cos, sin = np.cos(phase), np.sin(phase)
        re = hr * cos - hi * sin - tr
        im = hr * sin + hi * cos - ti
        return hr, hi, cos, sin, re, im

    @staticmethod
    def score(model, h, r, t):
        *_, re, im = RotatE._residual(model, h, r, t)
        return model.gamma - np.sqrt(re ** 2 + im ** 2).sum(axis=-1)

    @staticmethod
    def gradient(model, h, r, t):
        hr, hi, cos, sin, re, im = RotatE._residual(model, h, r, t)
        modulus = np.sqrt(re ** 2 + im ** 2)
        ure = np.divide(re, modulus, out=np.zeros_like(re), where=modulus > 0)
        uim = np.divide(im, modulus, out=np.zeros_like(im), where=modulus > 0)
        gh = _join_complex(-(ure * cos + uim * sin), -(uim * cos - ure * sin))
        gt = _join_complex(ure, uim)
        dphase = -(ure * (-hr * sin - hi * cos) + uim * (hr * cos - hi * sin))
        return gh, dphase * model.phase_scale, gt


class PairRE:
    """Each relation stores a head projection and a tail projection, [r^H, r^T]."""

    @staticmethod
    def relation_dim(dim):
        return 2 * dim

    @staticmethod
    def score(model, h, r, t):
        dim = h.shape[-1]
        residual = h * r[..., :dim] - t * r[..., dim:]
        return model.gamma - np.abs(residual).sum(axis=-1)

    @staticmethod
    def gradient(model, h, r, t):
        dim = h.shape[-1]
        r_head, r_tail = r[..., :dim], r[..., dim:]
        g = -np.sign(h * r_head - t * r_tail)
        return g * r_head, np.concatenate([g * h, -g * t], axis=-1), -g * r_tail


SCORERS = {
    TRANSE: TransE,
    DISTMULT: DistMult,
    COMPLEX: ComplEx,
    ROTATE: RotatE,
    PAIRRE: PairRE,
}


class ScoringModel:

    def __init__(self, kind, table, relations, gamma=DEFAULT_GAMMA, norm=1):
        self.kind = canonical_kind(kind)
        self.table = table
        self.relations = relations
        self.gamma = float(gamma)
        self.norm = int(norm)

        if self.kind in (COMPLEX, ROTATE) and table.dim % 2:
            raise ValueError(f"{self.kind} needs an even embedding dimension, got {table.dim}")
        if self.norm not in (1, 2):
            raise ValueError("TransE norm must be 1 or 2")
        expected = SCORERS[self.kind].relation_dim(table.dim)
        if relations.ndim != 2 or relations.shape[1] != expected:
            raise ValueError(f"{self.kind} relation rows must have width {expected}, got {relations.shape}")

    @property
    def scorer(self):
        return SCORERS[self.kind]

    @property
    def entity_count(self):
        return self.table.entity_count

    @property
    def relation_count(self):
        return self.relations.shape[0]

    @property
    def dim(self):
        return self.table.dim

    @property
    def phase_scale(self):
        return np.pi / embedding_range(self.gamma, self.dim)

    def parameters(self):
        params = self.table.parameters()
        params['relation'] = self.relations
        return params

    def param_count(self):
        return self.table.param_count() + self.relations.size

    def score(self, heads, relations, tails):
        h = self.table.materialize(heads).astype(np.float64)
        r = self.relations[np.asarray(relations, dtype=np.int64)].astype(np.float64)
        t = self.table.materialize(tails).astype(np.float64)
        return self.scorer.score(self, h, r, t)


def embedding_range(gamma, dim):
    return (gamma if gamma > 0 else 1.0) / dim


def init_model(kind, entity_count, relation_count, dim, rank=0, gamma=DEFAULT_GAMMA, norm=1,
               rng=None, dtype=np.float32, allow_identity=False):
    """Draw entity and relation entries uniformly from [-b, b], b = gamma / d."""
    kind = canonical_kind(kind)
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = embedding_range(gamma, dim)
    table = make_table(entity_count, dim, rank, bound, rng, dtype=dtype, allow_identity=allow_identity)
    relations = rng.uniform(-bound, bound, size=(relation_count, SCORERS[kind].relation_dim(dim))).astype(dtype)
    return ScoringModel(kind, table, relations, gamma=gamma, norm=norm)


def param_count(model):
    return model.param_count()


def score_triple(model, h, r, t):
    check_entity(h, model.entity_count)
    check_relation(r, model.relation_count)
    check_entity(t, model.entity_count)
    return float(model.score([h], [r], [t])[0])


def score_candidates(model, known, relation, candidates, direction=TAIL):
    """Score every candidate as the missing slot of one query."""
    candidates = np.asarray(candidates, dtype=np.int64)
    anchor = model.table.materialize([known]).astype(np.float64)
    others = model.table.materialize(candidates).astype(np.float64)
    r = model.relations[[relation]].astype(np.float64)
    if direction == TAIL:
        return model.scorer.score(model, anchor, r, others)
    if direction == HEAD:
        return model.scorer.score(model, others, r, anchor)
    raise ValueError(f"direction must be '{TAIL}' or '{HEAD}'")


def score_gradients(model, heads, relations, tails, weights):
    """Sum over the batch of weights[i] * d score_i / d parameter.

    Returns an ordered mapping parameter name -> Gradient covering the touched
    entity rows (or factor rows and the shared basis), and relation rows.
    """
    heads = np.asarray(heads, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if not len(heads):
        raise ValueError("score_gradients needs a non-empty batch")

    h = model.table.materialize(heads).astype(np.float64)
    r = model.relations[relations].astype(np.float64)
    t = model.table.materialize(tails).astype(np.float64)
    gh, gr, gt = model.scorer.gradient(model, h, r, t)

    grads = model.table.backward(np.concatenate([heads, tails]),
                                 np.concatenate([weights * gh, weights * gt]))
    grads['relation'] = aggregate_rows(relations, weights * gr)
    return grads
