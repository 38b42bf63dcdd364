import logging
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit, softmax
from tqdm import tqdm

from kgengine.common import HEAD, TAIL, VALID, DivergenceError
from kgengine.models import score_gradients
from kgengine.optim import ADAGRAD, OPTIMIZERS, make_optimizer

logger = logging.getLogger(__name__)

MAX_RESAMPLE_ROUNDS = 10


@dataclass
class TrainConfig:
    batch_size: int = 512
    negatives: int = 64
    adversarial_temperature: float = 1.0
    learning_rate: float = 0.05
    optimizer: str = ADAGRAD
    epochs: int = 10
    eval_every: int = 0
    seed: int = 0
    filter_negatives: bool = True
    workers: int = 1

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.negatives < 1:
            raise ValueError("negatives per positive must be at least 1")
        if self.adversarial_temperature < 0:
            raise ValueError("adversarial temperature must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer.lower() not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.epochs < 0 or self.eval_every < 0 or self.workers < 1:
            raise ValueError("epochs and eval_every must be >= 0, workers >= 1")
        return self


@dataclass
class EpochStats:
    epoch: int
    loss: float
    triples_per_sec: float
    wall_ms: float
    valid_mrr: Optional[float] = None

    def to_record(self):
        record = OrderedDict([('epoch', self.epoch), ('loss', self.loss),
                              ('triples_per_sec', self.triples_per_sec), ('wall_ms', self.wall_ms)])
        if self.valid_mrr is not None:
            record['valid_mrr'] = self.valid_mrr
        return record


# Negative sampling


def _corrupt(kg, triples, candidates, mode):
    if mode == TAIL:
        return kg.contains(triples[:, 0:1], triples[:, 1:2], candidates)
    return kg.contains(candidates, triples[:, 1:2], triples[:, 2:3])


def sample_negative_batch(kg, triples, negatives, mode, rng, filtered=True):
    """(len(triples), negatives) replacement ids for the `mode` slot of each triple.

    With filtering, corruptions that reproduce a train triple are redrawn; rows
    still rejected after a few rounds are drawn from their explicit valid set.
    """
    if negatives < 1:
        raise ValueError("negatives must be at least 1")
    if mode not in (HEAD, TAIL):
        raise ValueError(f"mode must be '{HEAD}' or '{TAIL}'")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    samples = rng.integers(0, kg.entity_count, size=(len(triples), negatives))
    if not filtered:
        return samples

    rejected = _corrupt(kg, triples, samples, mode)
    for _ in range(MAX_RESAMPLE_ROUNDS):
        if not rejected.any():
            return samples
        samples[rejected] = rng.integers(0, kg.entity_count, size=int(rejected.sum()))
        rejected = _corrupt(kg, triples, samples, mode)

    everyone = np.arange(kg.entity_count)
    for row in np.flatnonzero(rejected.any(axis=1)):
        allowed = everyone[~_corrupt(kg, triples[row:row + 1], everyone[None, :], mode)[0]]
        if not len(allowed):
            logger.warning("Every corruption of triple %s is a train triple; sampling unfiltered",
                           triples[row].tolist())
            continue
        samples[row, rejected[row]] = rng.choice(allowed, size=int(rejected[row].sum()))
    return samples


def sample_negatives(kg, positive, negatives, mode, rng, filtered=True):
    return sample_negative_batch(kg, [positive], negatives, mode, rng, filtered)[0]


# Loss


def self_adversarial_loss(pos_scores, neg_scores, temperature, offset=0.0):
    """Mean self-adversarial negative-sampling loss and its gradients.

    loss_i = -log s(p_i) - sum_j w_ij log s(-n_ij), w_i = softmax(temperature * n_i)
    with w held constant. Returns (loss, dloss/dpos, dloss/dneg).
    """
    pos = np.atleast_1d(np.asarray(pos_scores, dtype=np.float64)) + offset
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(len(pos), -1) + offset
    if neg.shape[1] == 0:
        raise ValueError("self_adversarial_loss needs at least one negative score")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise DivergenceError("non-finite score in self-adversarial loss")

    weights = softmax(temperature * neg, axis=1)
    batch = len(pos)
    loss = (-log_expit(pos) - (weights * log_expit(-neg)).sum(axis=1)).mean()
    dpos = -expit(-pos) / batch
    dneg = weights * expit(neg) / batch
    return float(loss), dpos, dneg


# Epochs


def _batch_gradients(model, triples, mode, negatives, temperature):
    count, per_positive = negatives.shape
    heads = np.repeat(triples[:, 0], per_positive)
    relations = np.repeat(triples[:, 1], per_positive)
    tails = np.repeat(triples[:, 2], per_positive)
    if mode == TAIL:
        tails = negatives.reshape(-1)
    else:
        heads = negatives.reshape(-1)

    pos = model.score(triples[:, 0], triples[:, 1], triples[:, 2])
    neg = model.score(heads, relations, tails).reshape(count, per_positive)
    loss, dpos, dneg = self_adversarial_loss(pos, neg, temperature)
    grads = score_gradients(model,
                            np.concatenate([triples[:, 0], heads]),
                            np.concatenate([triples[:, 1], relations]),
                            np.concatenate([triples[:, 2], tails]),
                            np.concatenate([dpos, dneg.reshape(-1)]))
    return loss, grads


def train_kge_epoch(model, kg, config, rng, optimizer=None, epoch=1):
    """One shuffled pass over train triples, corrupting tails then heads of every batch.

    Negatives are drawn sequentially from `rng`. With more than one worker,
    `workers` consecutive jobs compute gradients concurrently against the same
    parameters and are then applied in job order.
    """
    config.validate()
    optimizer = optimizer if optimizer is not None else make_optimizer(config.optimizer, config.learning_rate)
    start = time.perf_counter()

    order = rng.permutation(len(kg.train))
    jobs = []
    for offset in range(0, len(order), config.batch_size):
        triples = kg.train[order[offset:offset + config.batch_size]]
        for mode in (TAIL, HEAD):
            jobs.append((triples, mode, sample_negative_batch(kg, triples, config.negatives, mode, rng,
                                                              config.filter_negatives)))

    losses = []
    params = model.parameters()
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        for first in range(0, len(jobs), config.workers):
            group = jobs[first:first + config.workers]
            if config.workers == 1:
                results = [_batch_gradients(model, *job, config.adversarial_temperature) for job in group]
            else:
                results = list(executor.map(lambda job: _batch_gradients(model, *job, config.adversarial_temperature),
                                            group))
            for loss, grads in results:
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss became {loss} in epoch {epoch}")
                optimizer.step(params, grads)
                losses.append(loss)

    wall = time.perf_counter() - start
    return EpochStats(epoch=epoch,
                      loss=float(np.mean(losses)) if losses else 0.0,
                      triples_per_sec=len(order) / wall if wall > 0 else 0.0,
                      wall_ms=wall * 1000.0)


def train_kge(model, kg, config, rng, on_epoch=None, progress=False):
    """Train for `config.epochs` epochs; returns the list of EpochStats.

    `on_epoch` receives every EpochStats as soon as the epoch ends. With
    eval_every > 0 the filtered full-traversal MRR on the valid split is
    attached every eval_every epochs.
    """
    from kgengine.inference import FULL_MODE, evaluate_link_prediction

    config.validate()
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    history = []
    for epoch in tqdm(range(1, config.epochs + 1), desc="Training", disable=not progress):
        stats = train_kge_epoch(model, kg, config, rng, optimizer, epoch)
        if config.eval_every and epoch % config.eval_every == 0 and len(kg.valid):
            stats.valid_mrr = evaluate_link_prediction(model, kg, VALID, mode=FULL_MODE).mrr
        logger.info("epoch %d: loss %.6f (%.0f triples/s)%s", epoch, stats.loss, stats.triples_per_sec,
                    "" if stats.valid_mrr is None else f", valid MRR {stats.valid_mrr:.4f}")
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return history
