import json
import logging
import os
from functools import wraps

import click

from kgengine.checkpoint import (load_typing_checkpoint, save_checkpoint,
                                 save_typing_checkpoint)
from kgengine.common import (EVAL_STREAM, HEAD, INIT_STREAM, LOG_FORMAT, MASKING_STREAM,
                             SAMPLING_STREAM, TAIL, TRAIN, TYPING_INIT_STREAM, TYPING_SAMPLING_STREAM,
                             ConfigError, KGEngineError, VocabularyError, append_json_line,
                             named_rng, write_json)
from kgengine.config import config_keys, load_config, write_effective_config
from kgengine.engine import load_engine, load_graph
from kgengine.experiments import budget_sweep, rank_sweep
from kgengine.graph import summarize
from kgengine.inference import (FTAI_MODE, SELECT_TYPING, Query, answer_query,
                                evaluate_link_prediction)
from kgengine.models import init_model
from kgengine.training import train_kge
from kgengine.typing_model import (TypingNetwork, evaluate_typing,
                                   train_typing)

logger = logging.getLogger(__name__)

GLOBAL_KEYS = ('seed', 'threads', 'output')

KGE_LOG = 'kge_train.jsonl'
TYPING_LOG = 'typing_train.jsonl'
LP_METRICS = 'metrics_lp.json'
TYPING_METRICS = 'metrics_typing.json'
PREDICTIONS = 'predictions.jsonl'
STATS = 'stats.json'
BUDGET_SWEEP = 'budget_sweep.csv'
RANK_SWEEP = 'rank_sweep.csv'


def config_options(command):
    """Add one --<key> option per configuration key, plus error translation."""
    for key in reversed([key for key in config_keys() if key not in GLOBAL_KEYS]):
        command = click.option(f"--{key.replace('_', '-')}", key, default=None,
                               help=f"Override the '{key}' configuration key.")(command)

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except KGEngineError as e:
            raise click.ClickException(str(e))
    return wrapper


def _load(ctx, overrides, require_data=True):
    merged = dict(overrides)
    merged.update({key: value for key, value in ctx.obj['globals'].items() if value is not None})
    config = load_config(ctx.obj['config_path'], merged, require_data=require_data)
    os.makedirs(config.output, exist_ok=True)
    write_effective_config(config)
    return config


def _jsonl_writer(path):
    if os.path.exists(path):
        os.remove(path)

    def write(stats):
        click.echo(append_json_line(path, stats.to_record()))
    return write


@click.group()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat key=value configuration file.")
@click.option('--seed', type=int, default=None, help="Seed of every random stream.")
@click.option('--threads', type=int, default=None, help="Worker threads for training and evaluation.")
@click.option('--output', type=click.Path(file_okay=False), default=None, help="Artifact directory.")
@click.option('--log-level', default='INFO', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']))
@click.pass_context
def cli(ctx, config_path, seed, threads, output, log_level):
    """Knowledge-graph embedding training, entity typing and typing-aware inference."""
    logging.basicConfig(level=log_level, format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj['config_path'] = config_path
    ctx.obj['globals'] = {'seed': seed, 'threads': threads, 'output': output}


@cli.command('stats')
@config_options
@click.pass_context
def stats_command(ctx, **overrides):
    """Print and save graph statistics."""
    config = _load(ctx, overrides)
    summary = summarize(load_graph(config))
    write_json(config.output_path(STATS), summary)
    click.echo(json.dumps(summary, indent=4))


@cli.command('train-kge')
@config_options
@click.pass_context
def train_kge_command(ctx, **overrides):
    """Train a scoring model and write its checkpoint."""
    config = _load(ctx, overrides)
    kg = load_graph(config)
    model = init_model(config.model, kg.entity_count, kg.relation_count, config.dim, rank=config.rank,
                       gamma=config.gamma, norm=config.norm, rng=named_rng(config.seed, INIT_STREAM),
                       allow_identity=config.identity_override)
    logger.info("%s (%s table): %d parameters", model.kind, model.table.variant, model.param_count())
    train_kge(model, kg, config.train_config(), named_rng(config.seed, SAMPLING_STREAM),
              on_epoch=_jsonl_writer(config.output_path(KGE_LOG)))
    save_checkpoint(model, config.kge_checkpoint_path())


@cli.command('train-typing')
@config_options
@click.pass_context
def train_typing_command(ctx, **overrides):
    """Train the typing network and write its checkpoint."""
    config = _load(ctx, overrides)
    kg = load_graph(config)
    network = TypingNetwork.initialize(kg.relation_count, config.typing_layers, config.edge_dim, config.node_dim,
                                       rng=named_rng(config.seed, TYPING_INIT_STREAM))
    train_typing(network, kg, config.typing_config(), named_rng(config.seed, TYPING_SAMPLING_STREAM),
                 on_epoch=_jsonl_writer(config.output_path(TYPING_LOG)),
                 mask_rng=named_rng(config.seed, MASKING_STREAM))
    save_typing_checkpoint(network, config.typing_checkpoint_path())


@cli.command('eval-lp')
@config_options
@click.pass_context
def eval_lp_command(ctx, **overrides):
    """Filtered link-prediction evaluation, full traversal or typing-aware."""
    config = _load(ctx, overrides)
    need_typing = config.mode == FTAI_MODE and config.selection == SELECT_TYPING
    engine = load_engine(config, need_typing=need_typing)
    metrics = evaluate_link_prediction(engine.model, engine.kg, config.eval_split, mode=config.mode,
                                       budget=config.budget or None, priors=engine.priors, table=engine.table,
                                       pool=config.pool, selection=config.selection,
                                       filter_index=engine.filter_index, workers=config.threads,
                                       hops=config.neighborhood_hops,
                                       neighborhood_cap=config.neighborhood_cap or None, progress=True)
    document = metrics.to_document()
    write_json(config.output_path(LP_METRICS), document)
    click.echo(json.dumps(document, indent=4))


@cli.command('eval-typing')
@config_options
@click.pass_context
def eval_typing_command(ctx, **overrides):
    """Rank each triple's relation among the head's directed types."""
    config = _load(ctx, overrides)
    if config.eval_split == TRAIN:
        raise click.ClickException("eval_split must be 'valid' or 'test' for typing evaluation")
    kg = load_graph(config)
    network = load_typing_checkpoint(config.typing_checkpoint_path())
    metrics = evaluate_typing(network, kg, config.eval_split, config.hops, config.per_type_cap,
                              rng=named_rng(config.seed, EVAL_STREAM))
    document = metrics.to_document()
    write_json(config.output_path(TYPING_METRICS), document)
    click.echo(json.dumps(document, indent=4))


def read_queries(path, kg):
    """Rows of entity<TAB>relation[<TAB>direction] labels; direction defaults to tail."""
    queries = []
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            fields = line.rstrip('\r\n').split('\t')
            if not any(field.strip() for field in fields):
                continue
            if len(fields) not in (2, 3):
                raise VocabularyError(f"{path}:{line_number}: expected entity, relation and optional direction")
            direction = fields[2] if len(fields) == 3 else TAIL
            if direction not in (TAIL, HEAD):
                raise VocabularyError(f"{path}:{line_number}: direction must be '{TAIL}' or '{HEAD}'")
            queries.append(Query(kg.entity_id(fields[0]), kg.relation_id(fields[1]), direction))
    return queries


@cli.command('infer')
@config_options
@click.pass_context
def infer_command(ctx, **overrides):
    """Answer the queries listed in queries_path."""
    config = _load(ctx, overrides)
    if not config.queries_path:
        raise click.ClickException("queries_path: is required for infer")
    need_typing = config.mode == FTAI_MODE and config.selection == SELECT_TYPING
    engine = load_engine(config, need_typing=need_typing)

    path = config.output_path(PREDICTIONS)
    if os.path.exists(path):
        os.remove(path)
    for query in read_queries(config.queries_path, engine.kg):
        prediction = answer_query(engine.model, engine.kg, query, config.top_k, mode=config.mode,
                                  budget=config.budget or None, table=engine.table, priors=engine.priors,
                                  pool=config.pool, selection=config.selection,
                                  filter_index=engine.known_answers)
        click.echo(append_json_line(path, prediction))


@cli.command('sweep-budget')
@config_options
@click.pass_context
def sweep_budget_command(ctx, **overrides):
    """Evaluate full traversal, then `selection` candidates at each budget in `budgets`."""
    config = _load(ctx, overrides)
    budgets = config.int_list('budgets')
    if not budgets:
        raise ConfigError('budgets', "give at least one candidate budget")
    if config.selection == SELECT_TYPING and not os.path.exists(config.typing_checkpoint_path()):
        raise ConfigError('selection', f"typing selection needs a typing checkpoint at "
                                       f"{config.typing_checkpoint_path()}; run train-typing or use degree")
    engine = load_engine(config, need_typing=config.selection == SELECT_TYPING)
    frame = budget_sweep(engine.model, engine.kg, config.eval_split, budgets, table=engine.table,
                         priors=engine.priors, pool=config.pool, workers=config.threads,
                         selections=(config.selection,), progress=True)
    frame.to_csv(config.output_path(BUDGET_SWEEP), index=False)
    click.echo(frame.to_string(index=False))


@cli.command('sweep-rank')
@config_options
@click.pass_context
def sweep_rank_command(ctx, **overrides):
    """Train full tables at `full_dims` and low-rank tables at `low_rank_dim` for each of `ranks`."""
    config = _load(ctx, overrides)
    kg = load_graph(config)
    ranks = config.int_list('ranks')
    if ranks and not config.low_rank_dim:
        raise ConfigError('low_rank_dim', "low-rank runs in `ranks` need low_rank_dim")
    if any(rank < 1 or rank >= config.low_rank_dim for rank in ranks):
        raise ConfigError('ranks', f"every rank must lie in [1, low_rank_dim={config.low_rank_dim})")
    frame = rank_sweep(kg, config.model, config.train_config(), full_dims=config.int_list('full_dims'),
                       low_rank_dim=config.low_rank_dim or None, ranks=ranks,
                       gamma=config.gamma, norm=config.norm, split=config.eval_split, seed=config.seed)
    frame.to_csv(config.output_path(RANK_SWEEP), index=False)
    click.echo(frame.to_string(index=False))


def main():
    cli(obj={})


if __name__ == '__main__':
    main()
