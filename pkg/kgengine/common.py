import json
import logging
import zlib
from collections import OrderedDict

import numpy as np

logger = logging.getLogger(__name__)

# Split names
TRAIN = 'train'
VALID = 'valid'
TEST = 'test'
SPLITS = (TRAIN, VALID, TEST)

# Query directions
TAIL = 'tail'
HEAD = 'head'
DIRECTIONS = (TAIL, HEAD)

# Named random streams
INIT_STREAM = 'init'
SAMPLING_STREAM = 'sampling'
MASKING_STREAM = 'masking'
TYPING_INIT_STREAM = 'typing-init'
TYPING_SAMPLING_STREAM = 'typing-sampling'
EVAL_STREAM = 'eval'

LOG_FORMAT = '[%(levelname)s] %(name)s: %(message)s'


class KGEngineError(Exception):
    pass


class TripleParseError(KGEngineError):

    def __init__(self, path, line_number, detail):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {detail}")


class VocabularyError(KGEngineError):
    pass


class EntityOutOfRangeError(KGEngineError, IndexError):
    pass


class CheckpointError(KGEngineError):

    def __init__(self, reason, path=None):
        self.reason = reason
        self.path = path
        super().__init__(reason if path is None else f"{reason} ({path})")


class ConfigError(KGEngineError):

    def __init__(self, key, detail):
        self.key = key
        super().__init__(f"{key}: {detail}")


class DivergenceError(KGEngineError):
    pass


class EmptySubgraphError(KGEngineError):
    pass


def named_rng(seed, stream):
    """Independent generator for one named random stream of an experiment."""
    return np.random.default_rng([int(seed), zlib.crc32(stream.encode('utf-8'))])


def check_entity(entity, entity_count):
    if not 0 <= int(entity) < entity_count:
        raise EntityOutOfRangeError(f"entity id {entity} outside [0, {entity_count})")
    return int(entity)


def check_relation(relation, relation_count):
    if not 0 <= int(relation) < relation_count:
        raise EntityOutOfRangeError(f"relation id {relation} outside [0, {relation_count})")
    return int(relation)


def reverse_type(directed_type, relation_count):
    return (directed_type + relation_count) % (2 * relation_count)


def to_jsonable(value):
    if isinstance(value, dict):
        return OrderedDict((str(k), to_jsonable(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    return value


def write_json(path, document):
    with open(path, 'w') as f:
        f.write(json.dumps(to_jsonable(document), indent=4))


def append_json_line(path, record):
    line = json.dumps(to_jsonable(record))
    with open(path, 'a') as f:
        f.write(line + '\n')
    return line
