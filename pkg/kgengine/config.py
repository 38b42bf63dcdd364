"""Experiment configuration.

Sources, lowest to highest precedence: dataclass defaults, a flat key=value
file, KGENGINE_<KEY> environment variables, explicit overrides (command-line
flags). Every key is a field of ExperimentConfig.
"""
import logging
import os
from dataclasses import asdict, dataclass, fields

from dotenv import dotenv_values

from kgengine.common import SPLITS, TEST, ConfigError
from kgengine.graph import UNKNOWN_POLICIES, UNKNOWN_SKIP
from kgengine.inference import (FTAI_MODE, MODES, POOL_UNION, POOLS,
                                SELECT_TYPING, SELECTIONS)
from kgengine.models import DEFAULT_GAMMA, canonical_kind
from kgengine.optim import ADAGRAD, OPTIMIZERS
from kgengine.training import TrainConfig
from kgengine.typing_model import (DEFAULT_HIDDEN, DEFAULT_HOPS,
                                   DEFAULT_LAYERS, DEFAULT_MARGIN,
                                   DEFAULT_PER_TYPE_CAP, DEFAULT_SCALE,
                                   RANKING, TYPING_LOSSES, TypingConfig)

logger = logging.getLogger(__name__)

ENV_PREFIX = 'KGENGINE_'
EFFECTIVE_CONFIG_FILE = 'effective_config.env'

TRUE_VALUES = ('1', 'true', 'yes', 'on')
FALSE_VALUES = ('0', 'false', 'no', 'off')


@dataclass
class ExperimentConfig:
    # Dataset
    train_path: str = ''
    valid_path: str = ''
    test_path: str = ''
    entity_vocab: str = ''
    relation_vocab: str = ''
    unknown_labels: str = UNKNOWN_SKIP

    # Scoring model
    model: str = 'TransE'
    dim: int = 200
    rank: int = 0
    gamma: float = DEFAULT_GAMMA
    norm: int = 1
    identity_override: bool = False

    # Scoring-model training
    batch_size: int = 512
    negatives: int = 64
    adversarial_temperature: float = 1.0
    learning_rate: float = 0.05
    optimizer: str = ADAGRAD
    epochs: int = 10
    eval_every: int = 0
    filter_negatives: bool = True

    # Typing network
    typing_layers: int = DEFAULT_LAYERS
    edge_dim: int = DEFAULT_HIDDEN
    node_dim: int = DEFAULT_HIDDEN
    hops: int = DEFAULT_HOPS
    per_type_cap: int = DEFAULT_PER_TYPE_CAP
    typing_scale: float = DEFAULT_SCALE
    typing_margin: float = DEFAULT_MARGIN
    typing_loss: str = RANKING
    typing_epochs: int = 20
    typing_batch_size: int = 64
    typing_learning_rate: float = 0.01
    typing_optimizer: str = ADAGRAD

    # Inference
    mode: str = FTAI_MODE
    budget: int = 0
    pool: str = POOL_UNION
    selection: str = SELECT_TYPING
    neighborhood_hops: int = 2
    neighborhood_cap: int = 0
    eval_split: str = TEST
    top_k: int = 10
    queries_path: str = ''
    kge_checkpoint: str = ''
    typing_checkpoint: str = ''

    # Sweeps, comma-separated integers
    budgets: str = ''
    full_dims: str = ''
    low_rank_dim: int = 0
    ranks: str = ''

    # Global
    seed: int = 0
    threads: int = 1
    output: str = 'output'

    def train_config(self):
        return TrainConfig(batch_size=self.batch_size, negatives=self.negatives,
                           adversarial_temperature=self.adversarial_temperature,
                           learning_rate=self.learning_rate, optimizer=self.optimizer, epochs=self.epochs,
                           eval_every=self.eval_every, seed=self.seed,
                           filter_negatives=self.filter_negatives, workers=self.threads)

    def typing_config(self):
        return TypingConfig(hops=self.hops, per_type_cap=self.per_type_cap, scale=self.typing_scale,
                            margin=self.typing_margin, loss=self.typing_loss,
                            batch_size=self.typing_batch_size, learning_rate=self.typing_learning_rate,
                            optimizer=self.typing_optimizer, epochs=self.typing_epochs)

    def output_path(self, name):
        return os.path.join(self.output, name)

    def kge_checkpoint_path(self):
        return self.kge_checkpoint or self.output_path('kge.ckpt')

    def typing_checkpoint_path(self):
        return self.typing_checkpoint or self.output_path('typing.ckpt')

    def int_list(self, key):
        raw = getattr(self, key)
        try:
            return [int(item) for item in raw.split(',') if item.strip()]
        except ValueError:
            raise ConfigError(key, f"expected comma-separated integers, got '{raw}'")


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def config_keys():
    return list(FIELD_TYPES)


def parse_value(key, raw):
    """Convert a raw string (or already typed value) to the type of `key`."""
    if key not in FIELD_TYPES:
        raise ConfigError(key, "unknown configuration key")
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        raw = str(raw)
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in TRUE_VALUES:
            return True
        if raw.lower() in FALSE_VALUES:
            return False
        raise ConfigError(key, f"expected a boolean, got '{raw}'")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got '{raw}'")


def read_config_file(path):
    if not os.path.exists(path):
        raise ConfigError('config', f"file not found: {path}")
    values = dotenv_values(path)
    for key in values:
        if key not in FIELD_TYPES:
            raise ConfigError(key, f"unknown configuration key in {path}")
    return values


def environment_values(environ=None):
    environ = os.environ if environ is None else environ
    values = {}
    for key in FIELD_TYPES:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            values[key] = environ[name]
    return values


def _check_choice(key, value, choices):
    if value not in choices:
        raise ConfigError(key, f"'{value}' is not one of {tuple(choices)}")


def validate_config(config, require_data=True):
    try:
        config.model = canonical_kind(config.model)
    except ValueError as e:
        raise ConfigError('model', str(e))

    if config.dim < 1:
        raise ConfigError('dim', "must be at least 1")
    if config.rank < 0:
        raise ConfigError('rank', "must be 0 (full table) or positive")
    if config.rank and (config.rank > config.dim or (config.rank == config.dim and not config.identity_override)):
        raise ConfigError('rank', f"low-rank entity tables factor Z = Z_d * W and need r < d "
                                  f"(got r={config.rank}, d={config.dim}); set identity_override for r = d")
    if config.norm not in (1, 2):
        raise ConfigError('norm', "must be 1 or 2")
    if config.negatives < 1:
        raise ConfigError('negatives', "must be at least 1")
    if config.adversarial_temperature < 0:
        raise ConfigError('adversarial_temperature', "must be non-negative")
    for key in ('learning_rate', 'typing_learning_rate'):
        if getattr(config, key) < 0:
            raise ConfigError(key, "must be non-negative")
    for key in ('batch_size', 'typing_batch_size', 'typing_layers', 'edge_dim', 'hops', 'per_type_cap',
                'neighborhood_hops', 'top_k', 'threads'):
        if getattr(config, key) < 1:
            raise ConfigError(key, "must be at least 1")
    for key in ('epochs', 'typing_epochs', 'eval_every', 'budget', 'neighborhood_cap', 'low_rank_dim'):
        if getattr(config, key) < 0:
            raise ConfigError(key, "must be non-negative")
    if config.node_dim != config.edge_dim:
        raise ConfigError('node_dim', "must equal edge_dim (node messages are sums of edge states)")
    if config.typing_scale <= 0:
        raise ConfigError('typing_scale', "must be positive")

    _check_choice('optimizer', config.optimizer, OPTIMIZERS)
    _check_choice('typing_optimizer', config.typing_optimizer, OPTIMIZERS)
    _check_choice('typing_loss', config.typing_loss, TYPING_LOSSES)
    _check_choice('mode', config.mode, MODES)
    _check_choice('pool', config.pool, POOLS)
    _check_choice('selection', config.selection, SELECTIONS)
    _check_choice('eval_split', config.eval_split, SPLITS)
    _check_choice('unknown_labels', config.unknown_labels, UNKNOWN_POLICIES)
    for key in ('budgets', 'full_dims', 'ranks'):
        config.int_list(key)

    if require_data:
        if not config.train_path:
            raise ConfigError('train_path', "is required")
        for key in ('train_path', 'valid_path', 'test_path', 'entity_vocab', 'relation_vocab', 'queries_path'):
            path = getattr(config, key)
            if path and not os.path.exists(path):
                raise ConfigError(key, f"path does not exist: {path}")
    return config


def load_config(path=None, overrides=None, environ=None, require_data=True):
    """Merge every configuration source and validate the result."""
    merged = {}
    if path:
        merged.update(read_config_file(path))
    merged.update(environment_values(environ))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    values = {key: parse_value(key, raw) for key, raw in merged.items()}
    return validate_config(ExperimentConfig(**values), require_data=require_data)


def write_effective_config(config, directory=None):
    directory = directory or config.output
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, EFFECTIVE_CONFIG_FILE)
    with open(path, 'w') as f:
        for key, value in asdict(config).items():
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            f.write(f"{key}={value}\n")
    logger.info("Wrote effective configuration to %s", path)
    return path
