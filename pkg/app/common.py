"""Process-wide engine used by the HTTP endpoints.

The configuration file is named by the KGENGINE_CONFIG environment variable.
The engine (graph, checkpoints, typing table) is loaded on first use and
shared by every request.
"""
import logging
import os
from threading import Lock

from flask import abort

from kgengine.common import HEAD, TAIL, VocabularyError
from kgengine.config import load_config
from kgengine.engine import load_engine

logger = logging.getLogger(__name__)

CONFIG_ENV = 'KGENGINE_CONFIG'
MAX_TOP_K = 1000

# Engine cache
engine_cache = {}
engine_lock = Lock()


def get_engine():
    path = os.environ.get(CONFIG_ENV)
    with engine_lock:
        if path not in engine_cache:
            logger.info("Loading engine from %s", path or "environment")
            engine_cache[path] = load_engine(load_config(path))
        return engine_cache[path]


def set_engine(engine, path=None):
    with engine_lock:
        engine_cache[path] = engine


def clear_engine_cache():
    with engine_lock:
        engine_cache.clear()


# Validation


def get_entity(kg, label):
    try:
        return kg.entity_id(label.strip())
    except VocabularyError as e:
        abort(404, str(e))


def get_relation(kg, label):
    try:
        return kg.relation_id(label.strip())
    except VocabularyError as e:
        abort(404, str(e))


def validate_direction(direction):
    direction = direction.strip().lower()
    if direction not in (TAIL, HEAD):
        abort(400, f"direction must be '{TAIL}' or '{HEAD}'.")
    return direction


def validate_top_k(top_k):
    if top_k < 1 or top_k > MAX_TOP_K:
        abort(400, f"topK must be between 1 and {MAX_TOP_K}.")
    return top_k
