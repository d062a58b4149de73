"""Layers with explicit forward/backward passes on channel-last (N, H, W, C) batches."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArchitectureError


def same_padding(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_pads(in_hw, kernel, stride, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    return same_padding(in_hw[0], kernel[0], stride), same_padding(in_hw[1], kernel[1], stride)


def conv_output_hw(in_hw, kernel, stride, padding):
    (pt, pb), (pl, pr) = conv_pads(in_hw, kernel, stride, padding)
    return ((in_hw[0] + pt + pb - kernel[0]) // stride + 1,
            (in_hw[1] + pl + pr - kernel[1]) // stride + 1)


def _im2col(x, kernel, stride, pads):
    (pt, pb), (pl, pr) = pads
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    win = sliding_window_view(xp, kernel, axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo, c, kh, kw = win.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c), (n, ho, wo)


def conv2d(x, w, stride=1, padding="same", bias=None):
    """Cross-correlation of x (N, H, W, C) with w (kh, kw, C, F)."""
    kh, kw, c, f = w.shape
    pads = conv_pads(x.shape[1:3], (kh, kw), stride, padding)
    cols, (n, ho, wo) = _im2col(x, (kh, kw), stride, pads)
    out = cols @ w.reshape(kh * kw * c, f)
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, f)


def _col2im(dcols, in_shape, kernel, stride, pads, out_hw):
    n, h, wd, c = in_shape
    kh, kw = kernel
    ho, wo = out_hw
    (pt, pb), (pl, pr) = pads
    dxp = np.zeros((n, h + pt + pb, wd + pl + pr, c), dtype=dcols.dtype)
    dcols = dcols.reshape(n, ho, wo, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pt:pt + h, pl:pl + wd, :]


def conv2d_transpose(dout, w, in_shape, stride=1, padding="same"):
    """Adjoint of conv2d with respect to its input."""
    kh, kw, c, f = w.shape
    pads = conv_pads(in_shape[1:3], (kh, kw), stride, padding)
    dcols = dout.reshape(-1, f) @ w.reshape(kh * kw * c, f).T
    return _col2im(dcols, in_shape, (kh, kw), stride, pads, dout.shape[1:3])


class Layer:
    kind = "layer"
    trainable = ()
    buffers = ()

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    kind = "conv2d"
    trainable = ("W", "b")

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding="same"):
        super().__init__()
        if kernel <= 0 or stride <= 0:
            raise ArchitectureError("kernel and stride must be positive")
        if padding not in ("same", "valid"):
            raise ArchitectureError(f"unknown padding {padding!r}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.params["W"] = np.zeros((kernel, kernel, in_channels, out_channels), dtype=np.float32)
        self.params["b"] = np.zeros(out_channels, dtype=np.float32)

    @property
    def fan_in(self):
        return self.kernel * self.kernel * self.in_channels

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise ArchitectureError(f"conv expects {self.in_channels} channels, got {c}")
        ho, wo = conv_output_hw((h, w), (self.kernel, self.kernel), self.stride, self.padding)
        if ho <= 0 or wo <= 0:
            raise ArchitectureError(f"conv output collapses for input {in_shape}")
        return ho, wo, self.out_channels

    def forward(self, x, train=False):
        W = self.params["W"]
        k = (self.kernel, self.kernel)
        pads = conv_pads(x.shape[1:3], k, self.stride, self.padding)
        cols, (n, ho, wo) = _im2col(x, k, self.stride, pads)
        out = cols @ W.reshape(-1, self.out_channels) + self.params["b"]
        self._cache = (cols, x.shape, pads, (ho, wo))
        return out.reshape(n, ho, wo, self.out_channels)

    def backward(self, dout):
        cols, in_shape, pads, out_hw = self._cache
        W = self.params["W"]
        d2 = dout.reshape(-1, self.out_channels)
        self.grads["W"] = (cols.T @ d2).reshape(W.shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = d2 @ W.reshape(-1, self.out_channels).T
        return _col2im(dcols, in_shape, (self.kernel, self.kernel), self.stride, pads, out_hw)

    def __repr__(self):
        return f"Conv2D({self.in_channels}->{self.out_channels}, k={self.kernel}, s={self.stride}, {self.padding})"


class BatchNorm(Layer):
    """Per-channel normalization over every axis but the last."""

    kind = "batchnorm"
    trainable = ("gamma", "beta")
    buffers = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-3, momentum=0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.params["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.params["running_var"] = np.ones(channels, dtype=np.float32)

    def output_shape(self, in_shape):
        if in_shape[-1] != self.channels:
            raise ArchitectureError(f"batchnorm expects {self.channels} channels, got {in_shape[-1]}")
        return in_shape

    def forward(self, x, train=False):
        p = self.params
        if not train:
            scale = p["gamma"] / np.sqrt(p["running_var"] + self.eps)
            return (x - p["running_mean"]) * scale + p["beta"]
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = self.momentum
        p["running_mean"] = (m * p["running_mean"] + (1 - m) * mean).astype(p["running_mean"].dtype)
        p["running_var"] = (m * p["running_var"] + (1 - m) * var).astype(p["running_var"].dtype)
        self._cache = (xhat, inv_std, axes)
        return xhat * p["gamma"] + p["beta"]

    def backward(self, dout):
        xhat, inv_std, axes = self._cache
        n = dout.size // dout.shape[-1]
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))

    def __repr__(self):
        return f"BatchNorm({self.channels})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        # np.maximum keeps NaN visible so divergence is caught upstream
        return np.maximum(x, 0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


class MaxPool(Layer):
    """Floor-mode max pooling; ties resolve to the first window element in row-major order."""

    kind = "maxpool"

    def __init__(self, pool=2, stride=None):
        super().__init__()
        self.pool = pool
        self.stride = pool if stride is None else stride
        if self.pool <= 0 or self.stride <= 0:
            raise ArchitectureError("pool size and stride must be positive")

    def output_shape(self, in_shape):
        h, w, c = in_shape
        ho, wo = (h - self.pool) // self.stride + 1, (w - self.pool) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ArchitectureError(f"pooling collapses input {in_shape}")
        return ho, wo, c

    def window_argmax(self, x):
        """Flat (row-major) argmax inside each window: (N, Ho, Wo, C) ints."""
        p, s = self.pool, self.stride
        win = sliding_window_view(x, (p, p), axis=(1, 2))[:, ::s, ::s]
        return win.reshape(win.shape[:4] + (p * p,)).argmax(axis=-1)

    def route(self, upper, arg, in_shape):
        """Send every upper value to the input position its window's argmax selects."""
        p, s = self.pool, self.stride
        n, ho, wo, c = upper.shape
        out = np.zeros(in_shape, dtype=upper.dtype)
        if p == s:
            onehot = (arg[..., None] == np.arange(p * p)) * upper[..., None]
            block = onehot.reshape(n, ho, wo, c, p, p).transpose(0, 1, 4, 2, 5, 3)
            out[:, :ho * p, :wo * p, :] = block.reshape(n, ho * p, wo * p, c)
        else:
            ni, hi, wi, ci = np.indices(arg.shape)
            np.add.at(out, (ni, hi * s + arg // p, wi * s + arg % p, ci), upper)
        return out

    def forward(self, x, train=False):
        arg = self.window_argmax(x)
        self._cache = (arg, x.shape)
        p, s = self.pool, self.stride
        win = sliding_window_view(x, (p, p), axis=(1, 2))[:, ::s, ::s]
        return win.max(axis=(-2, -1))

    def backward(self, dout):
        arg, in_shape = self._cache
        return self.route(dout, arg, in_shape)

    def __repr__(self):
        return f"MaxPool({self.pool}, stride={self.stride})"


class Dropout(Layer):
    """Inverted dropout; masks come from the owning model's generator."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ArchitectureError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.size).reshape(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / np.asarray(1.0 - self.rate, dtype=x.dtype)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def __repr__(self):
        return f"Dropout({self.rate})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"
    trainable = ("W", "b")

    def __init__(self, in_features, units):
        super().__init__()
        if units <= 0 or in_features <= 0:
            raise ArchitectureError("dense sizes must be positive")
        self.in_features, self.units = in_features, units
        self.params["W"] = np.zeros((in_features, units), dtype=np.float32)
        self.params["b"] = np.zeros(units, dtype=np.float32)

    @property
    def fan_in(self):
        return self.in_features

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ArchitectureError(f"dense expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.units,)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T

    def __repr__(self):
        return f"Dense({self.in_features}->{self.units})"


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False):
        self._p = softmax(x)
        return self._p

    def backward(self, dout):
        p = self._p
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))
