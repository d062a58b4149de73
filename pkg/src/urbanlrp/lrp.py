"""Layer-wise relevance propagation with the squared-weight and flat rules.

Relevance is seeded with the target logit (the softmax is never part of the
analyzed network) and pushed down layer by layer:

* dense / conv layers: ``R_i = sum_j q_ij / (sum_i' q_i'j) * R_j`` with
  ``q = w**2`` ("wsquare") or ``q = 1`` ("flat"); biases take no share;
* max-pool: winner-take-all to the window argmax;
* ReLU, flatten: pass-through.

Conv layers are handled as their unrolled linear map, so zero padding is not
an input: only real input positions inside a window enter its normalizer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, PropagationError, StructureError
from .formats import write_fmat
from .nn.layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax, conv2d, conv2d_transpose

RULES = ("flat", "wsquare")


@dataclass
class RelevanceMap:
    """Signed relevance over the input plane.

    ``raw`` keeps the un-normalized scores (their sum is the propagated
    total); ``values`` is ``raw`` divided by its largest magnitude.
    """

    raw: np.ndarray
    target_class: int
    rule: str
    source: str = "sample"
    class_name: str | None = None

    @property
    def values(self):
        peak = float(np.max(np.abs(self.raw))) if self.raw.size else 0.0
        if peak == 0.0:
            return np.zeros_like(self.raw)
        return self.raw / peak

    @property
    def total(self):
        return math.fsum(self.raw.ravel())

    def metadata(self):
        return {"class_id": int(self.target_class), "class": self.class_name, "rule": self.rule, "source": self.source}


class AnalyzableNetwork:
    """Linear/ReLU/pool stack ending in logits, with activations cached per layer input."""

    ALLOWED = (Conv2D, Dense, ReLU, MaxPool, Flatten)

    def __init__(self, layers, input_shape):
        for layer in layers:
            if isinstance(layer, Softmax):
                raise StructureError("analyzable networks end at the logits; drop the softmax")
            if not isinstance(layer, self.ALLOWED):
                raise StructureError(f"{type(layer).__name__} cannot be analyzed directly")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = tuple(shape)

    @property
    def weighted_layers(self):
        return [l for l in self.layers if isinstance(l, (Conv2D, Dense))]

    def forward(self, x):
        """Logits for one sample plus the input of every layer (activations[i] feeds layers[i])."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ParameterError(f"input shape {x.shape} does not match {self.input_shape}")
        acts = []
        h = x[None]
        for layer in self.layers:
            acts.append(h[0])
            h = _apply(layer, h)
        return h[0], acts


def _apply(layer, h):
    # stateless forward so cached activations never live on shared layer objects
    if isinstance(layer, Conv2D):
        return conv2d(h, layer.params["W"], layer.stride, layer.padding, layer.params["b"])
    if isinstance(layer, Dense):
        return h @ layer.params["W"] + layer.params["b"]
    if isinstance(layer, ReLU):
        return np.maximum(h, 0.0)
    if isinstance(layer, MaxPool):
        win = sliding_window_view(h, (layer.pool, layer.pool), axis=(1, 2))[:, ::layer.stride, ::layer.stride]
        return win.max(axis=(-2, -1))
    return h.reshape(h.shape[0], -1)


def fold_batchnorm(model):
    """Merge each Conv2D+BatchNorm pair into one convolution; drop dropout and softmax."""
    layers = []
    src = model.layers
    i = 0
    while i < len(src):
        layer = src[i]
        if isinstance(layer, BatchNorm):
            raise StructureError(f"batch norm at position {i} does not follow a convolution")
        if isinstance(layer, (Dropout, Softmax)):
            i += 1
            continue
        if isinstance(layer, Conv2D):
            conv = Conv2D(layer.in_channels, layer.out_channels, layer.kernel, layer.stride, layer.padding)
            W = layer.params["W"].astype(np.float64)
            b = layer.params["b"].astype(np.float64)
            if i + 1 < len(src) and isinstance(src[i + 1], BatchNorm):
                bn = src[i + 1]
                p = {k: v.astype(np.float64) for k, v in bn.params.items()}
                scale = p["gamma"] / np.sqrt(p["running_var"] + bn.eps)
                W = W * scale
                b = (b - p["running_mean"]) * scale + p["beta"]
                i += 1
            conv.params["W"], conv.params["b"] = W, b
            layers.append(conv)
        elif isinstance(layer, Dense):
            dense = Dense(layer.in_features, layer.units)
            dense.params = {k: v.astype(np.float64) for k, v in layer.params.items()}
            layers.append(dense)
        else:
            layers.append(type(layer)() if not isinstance(layer, MaxPool) else MaxPool(layer.pool, layer.stride))
        i += 1
    return AnalyzableNetwork(layers, model.input_shape)


def _check_rule(rule):
    if rule not in RULES:
        raise ParameterError(f"unknown rule {rule!r}; expected one of {RULES}")


def _redistribute(z, upper):
    degenerate = (z == 0) & (upper != 0)
    if np.any(degenerate):
        raise PropagationError(f"{int(degenerate.sum())} unit(s) carry relevance but have all-zero weights")
    return np.divide(upper, z, out=np.zeros_like(upper, dtype=np.float64), where=z != 0)


def relevance_dense_wsquare(weights, upper_relevance):
    """Split each upper unit's relevance over inputs in proportion to w_ij**2. ``weights`` is (in, out)."""
    w2 = np.asarray(weights, dtype=np.float64) ** 2
    s = _redistribute(w2.sum(axis=0), np.asarray(upper_relevance, dtype=np.float64))
    return w2 @ s


def relevance_dense_flat(fan_in, upper_relevance):
    """Uniform projection: every input receives sum(R_upper) / fan_in."""
    if fan_in <= 0:
        raise ParameterError("fan_in must be positive")
    return np.full(fan_in, math.fsum(np.ravel(upper_relevance)) / fan_in)


def relevance_conv(layer, activations, upper_relevance, rule):
    """Relevance through a convolution seen as its unrolled linear map.

    ``activations`` is the (H, W, C) layer input; only its shape matters for
    these two rules.
    """
    _check_rule(rule)
    W = layer.params["W"].astype(np.float64)
    q = W ** 2 if rule == "wsquare" else np.ones_like(W)
    in_shape = (1,) + tuple(np.shape(activations))
    z = conv2d(np.ones(in_shape), q, layer.stride, layer.padding)[0]
    s = _redistribute(z, np.asarray(upper_relevance, dtype=np.float64))
    return conv2d_transpose(s[None], q, in_shape, layer.stride, layer.padding)[0]


def relevance_maxpool(pool_layer, activations, upper_relevance):
    act = np.asarray(activations)[None]
    arg = pool_layer.window_argmax(act)
    return pool_layer.route(np.asarray(upper_relevance, dtype=np.float64)[None], arg, act.shape)[0]


def layer_rules(net, rule):
    """Expand a single rule or a per-weighted-layer list (input side first) into one rule per layer."""
    weighted = net.weighted_layers
    if isinstance(rule, str):
        rules = [rule] * len(weighted)
    else:
        rules = list(rule)
        if len(rules) != len(weighted):
            raise ParameterError(f"need {len(weighted)} rules, got {len(rules)}")
    for r in rules:
        _check_rule(r)
    it = iter(rules)
    return [next(it) if isinstance(l, (Conv2D, Dense)) else None for l in net.layers]


def propagate(net, activations, upper, rule="flat"):
    """Relevance at every layer boundary, from the logits down to the input.

    Returns a list whose first element is ``upper`` and last the input relevance.
    """
    rules = layer_rules(net, rule)
    trace = [np.asarray(upper, dtype=np.float64)]
    R = trace[0]
    for layer, act, r in zip(reversed(net.layers), reversed(activations), reversed(rules)):
        if isinstance(layer, Dense):
            R = relevance_dense_wsquare(layer.params["W"], R) if r == "wsquare" else relevance_dense_flat(layer.in_features, R)
        elif isinstance(layer, Conv2D):
            R = relevance_conv(layer, act, R, r)
        elif isinstance(layer, MaxPool):
            R = relevance_maxpool(layer, act, R)
        elif isinstance(layer, Flatten):
            R = R.reshape(act.shape)
        trace.append(R)
    return trace


def relevance_trace(net, image, target, rule="flat", seed_value=None):
    """(logits, per-layer relevance list) for one image."""
    pixels = image.pixels if hasattr(image, "pixels") else image
    logits, acts = net.forward(pixels)
    n_out = logits.size
    if not 0 <= int(target) < n_out:
        raise ParameterError(f"target {target} outside [0, {n_out - 1}]")
    seed = np.zeros(n_out)
    seed[int(target)] = logits[int(target)] if seed_value is None else seed_value
    return logits, propagate(net, acts, seed, rule)


def analyze(net, image, target, rule="flat", seed_value=None, class_name=None, source="sample"):
    """Relevance map for ``target``; input channels are summed into one plane."""
    _, trace = relevance_trace(net, image, target, rule, seed_value)
    R = trace[-1]
    plane = R.sum(axis=-1) if R.ndim == 3 else R
    label = rule if isinstance(rule, str) else "+".join(rule)
    return RelevanceMap(plane, int(target), label, source, class_name)


def average_maps(maps, class_id=None):
    """Pixel-wise mean of the un-normalized maps of one class and rule."""
    maps = list(maps)
    if not maps:
        raise ParameterError("no relevance maps to average")
    first = maps[0]
    if class_id is not None and int(class_id) != first.target_class:
        raise ParameterError(f"maps target class {first.target_class}, asked for {class_id}")
    for m in maps:
        if m.target_class != first.target_class or m.rule != first.rule:
            raise ParameterError("cannot average maps of different classes or rules")
    raw = np.mean([m.raw for m in maps], axis=0)
    return RelevanceMap(raw, first.target_class, first.rule, "class-average", first.class_name)


def diverging_palette(values):
    """Blue (-1) to white (0) to red (+1), linear in the normalized value; floats in [0, 1]."""
    v = np.clip(values, -1.0, 1.0)
    r = np.where(v < 0, 1.0 + v, 1.0)
    g = 1.0 - np.abs(v)
    b = np.where(v > 0, 1.0 - v, 1.0)
    return np.stack([r, g, b], axis=-1)


def overlay(rmap, image, alpha=0.6):
    """Alpha-blend the relevance palette over the grayscale spectrogram; uint8 RGB."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]")
    gray = image.pixels[..., 0] if hasattr(image, "pixels") else np.asarray(image)
    base = np.repeat(gray[..., None], 3, axis=-1)
    blended = alpha * diverging_palette(rmap.values) + (1.0 - alpha) * base
    return np.clip(np.rint(blended * 255.0), 0, 255).astype(np.uint8)


def save_relevance(rmap, path):
    """FMAT dump of the normalized map plus a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    write_fmat(path, rmap.values)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(rmap.metadata(), sort_keys=True) + "\n")
