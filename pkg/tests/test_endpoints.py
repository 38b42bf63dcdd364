import numpy as np
import pytest

from app import common, create_app
from kgengine.config import ExperimentConfig
from kgengine.engine import Engine
from kgengine.graph import degree_priors
from kgengine.inference import FilterIndex
from kgengine.models import init_model
from kgengine.typing_model import TypingNetwork, typing_table
from tests.utilities import compare_actual_and_expected_output


@pytest.fixture
def client(toy_kg, monkeypatch):
    monkeypatch.delenv(common.CONFIG_ENV, raising=False)
    network = TypingNetwork.initialize(toy_kg.relation_count, edge_dim=8, node_dim=8, rng=np.random.default_rng(0))
    engine = Engine(config=ExperimentConfig(dim=8, edge_dim=8, node_dim=8, budget=5),
                    kg=toy_kg,
                    model=init_model('TransE', toy_kg.entity_count, toy_kg.relation_count, 8,
                                     rng=np.random.default_rng(0)),
                    network=network,
                    table=typing_table(network, toy_kg),
                    priors=degree_priors(toy_kg),
                    filter_index=FilterIndex(toy_kg),
                    known_answers=FilterIndex(toy_kg, ('train',)))
    common.set_engine(engine, None)
    yield create_app().test_client()
    common.clear_engine_cache()


def test_stats(client):
    response = client.get('/stats')
    assert response.status_code == 200
    compare_actual_and_expected_output('toy_stats.json', response.get_json())


def test_typing(client):
    response = client.get('/typing', query_string={'entity': 'alice', 'topK': 3})
    assert response.status_code == 200
    body = response.get_json()
    assert body['entity'] == 'alice'
    assert len(body['types']) == 3
    probabilities = [t['probability'] for t in body['types']]
    assert probabilities == sorted(probabilities, reverse=True)


def test_infer(client):
    response = client.get('/infer', query_string={'entity': 'alice', 'relation': 'actedIn', 'topK': 4})
    assert response.status_code == 200
    body = response.get_json()
    assert list(body) == ['entity', 'relation', 'direction', 'candidates', 'answers']
    assert body['candidates'] <= 5
    assert len(body['answers']) <= 4
    assert not {'film1', 'film2'} & {answer['entity'] for answer in body['answers']}


def test_infer_full_mode(client):
    response = client.get('/infer', query_string={'entity': 'film1', 'relation': 'actedIn',
                                                  'direction': 'head', 'mode': 'full', 'topK': 100})
    assert response.status_code == 200
    # 9 entities less the known heads alice and bob
    assert response.get_json()['candidates'] == 7


def test_unknown_label(client):
    assert client.get('/typing', query_string={'entity': 'nobody'}).status_code == 404
    assert client.get('/infer', query_string={'entity': 'alice', 'relation': 'livesIn'}).status_code == 404


@pytest.mark.parametrize("params", [
    {'direction': 'sideways'},
    {'topK': 0},
    {'mode': 'fast'},
    {'budget': 0},
])
def test_bad_parameters(client, params):
    query = {'entity': 'alice', 'relation': 'actedIn'}
    query.update(params)
    assert client.get('/infer', query_string=query).status_code == 400


def test_engine_that_cannot_load(dataset_paths, tmp_path, monkeypatch):
    path = tmp_path / 'service.env'
    path.write_text(f"train_path={dataset_paths['train_path']}\noutput={tmp_path / 'empty'}\n")
    monkeypatch.setenv(common.CONFIG_ENV, str(path))
    common.clear_engine_cache()
    response = create_app().test_client().get('/stats')
    assert response.status_code == 503
    assert "missing checkpoint" in response.get_json()['detail']
    common.clear_engine_cache()
