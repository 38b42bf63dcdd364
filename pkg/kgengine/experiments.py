"""Sweeps that trace speed/quality and parameter-efficiency curves."""
import logging

import pandas as pd
from tqdm import tqdm

from kgengine.common import INIT_STREAM, SAMPLING_STREAM, named_rng
from kgengine.embeddings import FULL, LOW_RANK
from kgengine.inference import (FTAI_MODE, FULL_MODE, POOL_UNION,
                                SELECT_DEGREE, SELECT_TYPING, FilterIndex,
                                evaluate_link_prediction)
from kgengine.models import DEFAULT_GAMMA, init_model
from kgengine.training import train_kge

logger = logging.getLogger(__name__)

BUDGET_COLUMNS = ['mode', 'selection', 'budget', 'mrr', 'hits@1', 'hits@3', 'hits@10',
                  'mean_query_ms', 'mean_candidates', 'recall_at_budget']
RANK_COLUMNS = ['variant', 'dim', 'rank', 'entity_params', 'params', 'mrr', 'hits@10']


def _budget_row(metrics, selection):
    row = {'mode': metrics.mode, 'selection': selection, 'budget': metrics.budget, 'mrr': metrics.mrr}
    for k in ('1', '3', '10'):
        row[f'hits@{k}'] = metrics.hits.get(k)
    row.update(mean_query_ms=metrics.mean_query_ms, mean_candidates=metrics.mean_candidates,
               recall_at_budget=metrics.recall_at_budget)
    return row


def budget_sweep(model, kg, split, budgets, table=None, network=None, priors=None, pool=POOL_UNION,
                 workers=1, selections=(SELECT_TYPING, SELECT_DEGREE), progress=False):
    """Full traversal once, then ftai at every budget for each selection mode.

    Returns one DataFrame row per evaluation.
    """
    filter_index = FilterIndex(kg)
    rows = [_budget_row(evaluate_link_prediction(model, kg, split, mode=FULL_MODE,
                                                 filter_index=filter_index, workers=workers), FULL_MODE)]
    for budget in tqdm(sorted(budgets), desc="Budgets", disable=not progress):
        for selection in selections:
            metrics = evaluate_link_prediction(model, kg, split, mode=FTAI_MODE, budget=budget, network=network,
                                               priors=priors, table=table, pool=pool, selection=selection,
                                               filter_index=filter_index, workers=workers)
            rows.append(_budget_row(metrics, selection))
    return pd.DataFrame(rows, columns=BUDGET_COLUMNS)


def rank_sweep(kg, kind, train_config, full_dims=(), low_rank_dim=None, ranks=(), gamma=DEFAULT_GAMMA,
               norm=1, split='valid', seed=0):
    """Train a full table at each of `full_dims` and a low-rank table at `low_rank_dim` for each rank.

    Every run starts from the same named seeds.
    """
    configs = [(FULL, dim, 0) for dim in full_dims]
    if ranks and low_rank_dim is None:
        raise ValueError("low-rank runs need low_rank_dim")
    configs += [(LOW_RANK, low_rank_dim, rank) for rank in ranks]

    filter_index = FilterIndex(kg)
    rows = []
    for variant, dim, rank in configs:
        logger.info("Training %s %s d=%d r=%d", kind, variant, dim, rank)
        model = init_model(kind, kg.entity_count, kg.relation_count, dim, rank=rank, gamma=gamma, norm=norm,
                           rng=named_rng(seed, INIT_STREAM))
        train_kge(model, kg, train_config, named_rng(seed, SAMPLING_STREAM))
        metrics = evaluate_link_prediction(model, kg, split, mode=FULL_MODE, filter_index=filter_index,
                                           workers=train_config.workers)
        rows.append({'variant': variant, 'dim': dim, 'rank': rank,
                     'entity_params': model.table.param_count(), 'params': model.param_count(),
                     'mrr': metrics.mrr, 'hits@10': metrics.hits.get('10')})
    return pd.DataFrame(rows, columns=RANK_COLUMNS)
