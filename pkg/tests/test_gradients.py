"""Analytic gradients against central finite differences (float64, h = 1e-4)."""
import numpy as np
import pytest

from conftest import finite_difference, rel_error
from urbanlrp.nn import (BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, NetworkModel, ReLU, Softmax,
                         loss_and_grads)
from urbanlrp.nn.model import initialize
from urbanlrp.rng import Xoshiro256

TOL = 1e-6


def _f64(layer):
    for k, v in layer.params.items():
        layer.params[k] = v.astype(np.float64)
    return layer


def check_layer(layer, x, rng, train=True, before=None):
    """Compare d/dx and d/dparams of sum(G * layer(x)) with finite differences."""
    before = before or (lambda: None)
    before()
    out = layer.forward(x, train=train)
    G = rng.normal(size=out.shape)
    dx = layer.backward(G)
    analytic = {k: g.copy() for k, g in layer.grads.items()}

    def f():
        before()
        return float(np.sum(G * layer.forward(x, train=train)))

    assert rel_error(dx, finite_difference(f, x)) < TOL
    for name in layer.trainable:
        assert rel_error(analytic[name], finite_difference(f, layer.params[name])) < TOL, name
    return dx


@pytest.mark.parametrize("padding,stride", [("same", 1), ("valid", 1), ("same", 2)])
def test_conv2d(rng, padding, stride):
    layer = _f64(Conv2D(2, 3, 3, stride, padding))
    layer.params["W"] = rng.normal(size=layer.params["W"].shape)
    layer.params["b"] = rng.normal(size=3)
    check_layer(layer, rng.normal(size=(2, 6, 5, 2)), rng)


def test_batchnorm_train_mode(rng):
    layer = _f64(BatchNorm(3))
    layer.params["gamma"] = rng.uniform(0.5, 2, 3)
    layer.params["beta"] = rng.normal(size=3)
    check_layer(layer, rng.normal(size=(4, 3, 3, 3)), rng)


def test_batchnorm_dense_input(rng):
    layer = _f64(BatchNorm(5))
    layer.params["gamma"] = rng.uniform(0.5, 2, 5)
    check_layer(layer, rng.normal(size=(6, 5)), rng)


def test_relu(rng):
    x = rng.normal(size=(3, 4, 4, 2))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    check_layer(ReLU(), x, rng)


def test_maxpool(rng):
    # distinct values spaced far beyond 2h so no finite-difference step flips an argmax
    x = rng.permutation(2 * 7 * 6 * 2).reshape(2, 7, 6, 2) * 0.01
    check_layer(MaxPool(2, 2), x.astype(np.float64), rng)


def test_maxpool_overlapping(rng):
    x = rng.permutation(1 * 7 * 7 * 2).reshape(1, 7, 7, 2) * 0.01
    check_layer(MaxPool(3, 2), x.astype(np.float64), rng)


def test_dropout_fixed_mask(rng):
    layer = Dropout(0.4)
    shared = Xoshiro256(5)
    layer.rng = shared

    def reseed():
        layer.rng = Xoshiro256(5)

    check_layer(layer, rng.normal(size=(3, 10)), rng, before=reseed)


def test_flatten_and_dense(rng):
    check_layer(Flatten(), rng.normal(size=(2, 3, 2, 2)), rng)
    layer = _f64(Dense(6, 4))
    layer.params["W"] = rng.normal(size=(6, 4))
    layer.params["b"] = rng.normal(size=4)
    check_layer(layer, rng.normal(size=(3, 6)), rng)


def test_softmax(rng):
    check_layer(Softmax(), rng.normal(size=(3, 5)), rng)


def miniature_model(seed=0):
    layers = [
        Conv2D(3, 4, 3, 1, "same"), BatchNorm(4), ReLU(), MaxPool(2, 2),
        Conv2D(4, 4, 3, 1, "same"), BatchNorm(4), ReLU(), MaxPool(2, 2),
        Flatten(), Dense(16, 8), ReLU(), Dropout(0.3), Dense(8, 3), Softmax(),
    ]
    model = initialize(NetworkModel(layers, (8, 8, 3)), seed).astype(np.float64)
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            layer.params["gamma"] = np.linspace(0.7, 1.4, layer.channels)
            layer.params["beta"] = np.linspace(-0.2, 0.3, layer.channels)
    return model


def test_full_network_loss_gradients(rng):
    model = miniature_model()
    x = rng.uniform(0, 1, (4, 8, 8, 3))
    labels = np.array([0, 2, 1, 2])
    weights = np.array([1.0, 2.0, 0.5, 1.5])

    def loss():
        model.reseed(99)
        return loss_and_grads(model, x, labels, weights)[0]

    model.reseed(99)
    _, grads = loss_and_grads(model, x, labels, weights)
    grads = {k: v.copy() for k, v in grads.items()}
    assert len(grads) == 12
    for (i, name), g in grads.items():
        numeric = finite_difference(loss, model.layers[i].params[name])
        assert rel_error(g, numeric) < TOL, (i, name)
