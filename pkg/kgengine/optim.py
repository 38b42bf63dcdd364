from threading import Lock

import numpy as np

ADAGRAD = 'adagrad'
SGD = 'sgd'
OPTIMIZERS = (ADAGRAD, SGD)


class Optimizer:
    """Applies gradients to named parameter arrays in place.

    Gradients are computed by any number of workers; `step` is the single
    writer and serializes every update under one lock.
    """

    def __init__(self, learning_rate):
        if learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        self.learning_rate = float(learning_rate)
        self.lock = Lock()

    def step(self, params, grads):
        with self.lock:
            for name, grad in grads.items():
                param = params[name]
                rows = slice(None) if grad.rows is None else grad.rows
                update = self._update(name, param, rows, grad.values)
                param[rows] -= update.astype(param.dtype)

    def _update(self, name, param, rows, values):
        raise NotImplementedError


class SGDOptimizer(Optimizer):

    def _update(self, name, param, rows, values):
        return self.learning_rate * values


class AdagradOptimizer(Optimizer):

    def __init__(self, learning_rate, eps=1e-10):
        super().__init__(learning_rate)
        self.eps = eps
        self.state = {}

    def _update(self, name, param, rows, values):
        if name not in self.state:
            self.state[name] = np.zeros(param.shape, dtype=np.float64)
        accumulator = self.state[name]
        accumulator[rows] += values ** 2
        return self.learning_rate * values / (np.sqrt(accumulator[rows]) + self.eps)


def make_optimizer(kind, learning_rate):
    kind = kind.lower()
    if kind == ADAGRAD:
        return AdagradOptimizer(learning_rate)
    if kind == SGD:
        return SGDOptimizer(learning_rate)
    raise ValueError(f"unknown optimizer '{kind}', expected one of {OPTIMIZERS}")
