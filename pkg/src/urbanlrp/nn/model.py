"""Network container, architecture builders and the weighted cross-entropy pass."""
from __future__ import annotations

import numpy as np

from ..errors import ArchitectureError
from ..rng import Xoshiro256
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax

CONV_CHANNELS = (32, 32, 64, 64, 128)
DENSE_UNITS = 512
DROPOUT_RATE = 0.4
N_CLASSES = 10
LOG_EPS = 1e-12


class NetworkModel:
    def __init__(self, layers, input_shape, seed=0):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.mode = "inference"
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
        self.reseed(seed)

    def reseed(self, seed):
        """Reset the generator feeding dropout masks."""
        self.rng = Xoshiro256(seed)
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = self.rng

    @property
    def n_classes(self):
        return self.shapes[-1][0]

    def __repr__(self):
        return "NetworkModel(\n  " + "\n  ".join(map(repr, self.layers)) + "\n)"

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "inference"
        return self

    def parameters(self):
        """(layer index, name, array) for every trainable tensor in layer order."""
        return [(i, name, layer.params[name]) for i, layer in enumerate(self.layers) for name in layer.trainable]

    def state(self):
        """Every stored tensor (trainable and buffers) in serialization order."""
        return [(i, name, layer.params[name]) for i, layer in enumerate(self.layers)
                for name in layer.trainable + layer.buffers]

    def parameter_count(self):
        return sum(a.size for _, _, a in self.state())

    def snapshot(self):
        return [a.copy() for _, _, a in self.state()]

    def restore(self, snap):
        for (i, name, _), a in zip(self.state(), snap):
            self.layers[i].params[name] = a.copy()

    def astype(self, dtype):
        for layer in self.layers:
            for k, v in layer.params.items():
                layer.params[k] = v.astype(dtype)
        return self

    @property
    def dtype(self):
        state = self.state()
        return state[0][2].dtype if state else np.float32

    def _check_input(self, x):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ArchitectureError(f"input shape {tuple(x.shape[1:])} does not match {self.input_shape}")

    def logits(self, x, train=None):
        """Forward pass stopping before the softmax."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape):
            x = x[None]
        self._check_input(x)
        train = self.mode == "train" if train is None else train
        for layer in self.layers:
            if isinstance(layer, Softmax):
                break
            x = layer.forward(x, train=train)
        return x

    def forward(self, x, train=None):
        return softmax_rows(self.logits(x, train))

    def predict(self, x, batch_size=64):
        x = np.asarray(x)
        out = [self.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)


def softmax_rows(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def argmax_label(p):
    """Class with the largest probability; ties go to the lowest id."""
    return int(np.argmax(p))


def _he_uniform(rng, layer):
    W = layer.params["W"]
    limit = np.sqrt(6.0 / layer.fan_in)
    layer.params["W"] = rng.uniform(-limit, limit, W.shape).astype(W.dtype)


def initialize(model, seed):
    rng = Xoshiro256(seed)
    for layer in model.layers:
        if isinstance(layer, (Conv2D, Dense)):
            _he_uniform(rng, layer)
    model.reseed(seed + 1)
    return model


def build_model(seed=0, input_size=220, channels=CONV_CHANNELS, dense_units=DENSE_UNITS,
                n_classes=N_CLASSES, dropout=DROPOUT_RATE):
    """Conv blocks (3x3 same conv, BN, ReLU, 2x2 pool) then a 3-layer dense head.

    Defaults give the 220x220x3 five-block network; smaller variants only change
    the input size, channel list and head width.
    """
    layers = []
    in_ch = 3
    for out_ch in channels:
        layers += [Conv2D(in_ch, out_ch, 3, 1, "same"), BatchNorm(out_ch), ReLU(), MaxPool(2, 2)]
        in_ch = out_ch
    side = input_size
    for _ in channels:
        side //= 2
    flat = side * side * in_ch
    layers += [
        Flatten(),
        Dense(flat, dense_units), ReLU(), Dropout(dropout),
        Dense(dense_units, dense_units), ReLU(), Dropout(dropout),
        Dense(dense_units, n_classes), Softmax(),
    ]
    return initialize(NetworkModel(layers, (input_size, input_size, 3)), seed)


def build_dense_model(input_shape, hidden=(), n_classes=N_CLASSES, seed=0, dropout=0.0):
    """Flatten -> (Dense -> ReLU [-> Dropout])* -> Dense -> Softmax."""
    width = int(np.prod(input_shape))
    layers = [Flatten()]
    for units in hidden:
        layers += [Dense(width, units), ReLU()]
        if dropout:
            layers.append(Dropout(dropout))
        width = units
    layers += [Dense(width, n_classes), Softmax()]
    return initialize(NetworkModel(layers, input_shape), seed)


def validate_canonical(model):
    """Raise unless the model has 5 conv blocks and a 3-layer dense head ending in 10 units."""
    convs = [l for l in model.layers if isinstance(l, Conv2D)]
    denses = [l for l in model.layers if isinstance(l, Dense)]
    pools = [l for l in model.layers if isinstance(l, MaxPool)]
    if len(convs) != 5 or len(pools) != 5:
        raise ArchitectureError(f"expected 5 conv blocks, found {len(convs)} convs / {len(pools)} pools")
    if len(denses) != 3 or denses[-1].units != N_CLASSES:
        raise ArchitectureError("expected 3 dense layers ending in 10 units")
    if model.input_shape != (220, 220, 3):
        raise ArchitectureError(f"expected 220x220x3 input, got {model.input_shape}")
    return True


def loss_and_grads(model, x, labels, weights=None, return_probs=False):
    """Weighted categorical cross-entropy (batch mean) and gradients for every trainable tensor.

    Returns (loss, grads) with grads keyed by (layer index, name); the
    train-mode probabilities are appended when ``return_probs`` is set.
    """
    x = np.asarray(x, dtype=model.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (n,))
    z = model.logits(x, train=True)
    p = softmax_rows(z.astype(np.float64))
    py = p[np.arange(n), labels]
    loss = float(np.mean(-w * np.log(np.maximum(py, LOG_EPS))))
    dz = p.copy()
    dz[np.arange(n), labels] -= 1.0
    dz *= (w / n)[:, None]
    d = dz.astype(model.dtype)
    stop = next((i for i, l in enumerate(model.layers) if isinstance(l, Softmax)), len(model.layers))
    for layer in reversed(model.layers[:stop]):
        d = layer.backward(d)
    grads = {(i, name): model.layers[i].grads[name] for i, name, _ in model.parameters()}
    if return_probs:
        return loss, grads, p
    return loss, grads


def backward(model, image, label, weight=1.0):
    """Single-sample gradients and loss -weight * log p_label."""
    loss, grads = loss_and_grads(model, np.asarray(image)[None], [int(label)], [weight])
    return grads, loss
