from collections import OrderedDict

from flask import abort, jsonify

from app import common
from kgengine.graph import summarize
from kgengine.inference import (FULL_MODE, MODES, SELECT_TYPING, Query,
                                answer_query, entity_typing)
from kgengine.typing_model import typing_table


def get_stats():
    engine = common.get_engine()
    return jsonify(summarize(engine.kg))


def get_typing(entity, topK=10):

    # Parameters
    engine = common.get_engine()
    entity_id = common.get_entity(engine.kg, entity)
    topK = common.validate_top_k(topK)
    if engine.network is None:
        abort(400, "No typing checkpoint is loaded.")

    if engine.table is not None:
        row = engine.table[entity_id]
    else:
        row = typing_table(engine.network, engine.kg, [entity_id])[0]

    result = OrderedDict()
    result["entity"] = engine.kg.entity_labels[entity_id]
    result["types"] = entity_typing(engine.kg, row, topK)
    return jsonify(result)


def get_answers(entity, relation, direction='tail', topK=10, mode=None, budget=None):

    # Parameters
    engine = common.get_engine()
    config = engine.config
    query = Query(common.get_entity(engine.kg, entity),
                  common.get_relation(engine.kg, relation),
                  common.validate_direction(direction))
    topK = common.validate_top_k(topK)
    mode = (mode or config.mode).strip().lower()
    if mode not in MODES:
        abort(400, f"mode must be one of {', '.join(MODES)}.")
    if budget is not None and budget < 1:
        abort(400, "budget must be at least 1.")
    if mode != FULL_MODE and engine.table is None and config.selection == SELECT_TYPING:
        abort(400, "Typing-aware inference needs a typing checkpoint.")

    result = answer_query(engine.model, engine.kg, query, topK, mode=mode,
                          budget=budget or config.budget or None, table=engine.table,
                          priors=engine.priors, pool=config.pool, selection=config.selection,
                          filter_index=engine.known_answers)
    return jsonify(result)
