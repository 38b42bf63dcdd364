import numpy as np
import pytest

from kgengine.embeddings import Gradient
from kgengine.optim import AdagradOptimizer, SGDOptimizer, make_optimizer


def test_sgd_updates_only_given_rows():
    params = {'entity': np.ones((4, 2))}
    SGDOptimizer(0.5).step(params, {'entity': Gradient(np.array([1, 3]), np.array([[2.0, 2.0], [4.0, 0.0]]))})
    np.testing.assert_array_equal(params['entity'], [[1, 1], [0, 0], [1, 1], [-1, 1]])


def test_dense_gradient():
    params = {'relation': np.zeros(3)}
    SGDOptimizer(1.0).step(params, {'relation': Gradient(None, np.array([1.0, -1.0, 0.0]))})
    np.testing.assert_array_equal(params['relation'], [-1.0, 1.0, 0.0])


def test_adagrad_first_step_is_sign_times_rate():
    params = {'entity': np.zeros((2, 3))}
    AdagradOptimizer(0.1).step(params, {'entity': Gradient(np.array([0]), np.array([[3.0, -0.5, 0.0]]))})
    np.testing.assert_allclose(params['entity'][0], [-0.1, 0.1, 0.0], atol=1e-9)
    np.testing.assert_array_equal(params['entity'][1], 0.0)


def test_adagrad_accumulates():
    params = {'w': np.zeros(1)}
    optimizer = AdagradOptimizer(1.0)
    for _ in range(2):
        optimizer.step(params, {'w': Gradient(None, np.array([1.0]))})
    np.testing.assert_allclose(params['w'], [-1.0 - 1.0 / np.sqrt(2.0)])


def test_make_optimizer():
    assert isinstance(make_optimizer('AdaGrad', 0.1), AdagradOptimizer)
    with pytest.raises(ValueError):
        make_optimizer('adam', 0.1)
    with pytest.raises(ValueError):
        make_optimizer('sgd', -1.0)
