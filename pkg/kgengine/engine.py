"""Everything needed to answer queries, loaded once from a configuration."""
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from kgengine.checkpoint import load_checkpoint, load_typing_checkpoint
from kgengine.common import SPLITS, TRAIN, CheckpointError
from kgengine.graph import DegreePriors, KnowledgeGraph, degree_priors, load_knowledge_graph
from kgengine.inference import FilterIndex
from kgengine.models import ScoringModel
from kgengine.typing_model import TypingNetwork, typing_table

logger = logging.getLogger(__name__)


@dataclass
class Engine:
    config: object
    kg: KnowledgeGraph
    model: Optional[ScoringModel]
    network: Optional[TypingNetwork]
    table: Optional[np.ndarray]
    priors: DegreePriors
    filter_index: FilterIndex
    known_answers: FilterIndex


def load_graph(config):
    return load_knowledge_graph(config.train_path, config.valid_path, config.test_path,
                                config.entity_vocab or None, config.relation_vocab or None,
                                unknown=config.unknown_labels)


def load_engine(config, kg=None, need_model=True, need_typing=False):
    """Load graph, checkpoints and the typing table named by `config`.

    The typing network is loaded whenever its checkpoint exists; `need_typing`
    makes its absence an error.
    """
    kg = kg if kg is not None else load_graph(config)
    model = load_checkpoint(config.kge_checkpoint_path()) if need_model else None
    if model is not None and (model.entity_count != kg.entity_count or model.relation_count != kg.relation_count):
        raise CheckpointError(f"checkpoint vocabulary ({model.entity_count} entities, {model.relation_count} "
                              f"relations) does not match the graph", config.kge_checkpoint_path())

    network, table = None, None
    typing_path = config.typing_checkpoint_path()
    if need_typing or os.path.exists(typing_path):
        network = load_typing_checkpoint(typing_path)
        if network.relation_count != kg.relation_count:
            raise CheckpointError("typing checkpoint relation count does not match the graph", typing_path)
        logger.info("Typing %d entities", kg.entity_count)
        table = typing_table(network, kg, hops=config.hops, per_type_cap=config.per_type_cap,
                             seed=config.seed, progress=True)

    return Engine(config=config, kg=kg, model=model, network=network, table=table,
                  priors=degree_priors(kg), filter_index=FilterIndex(kg, SPLITS),
                  known_answers=FilterIndex(kg, (TRAIN,)))
