"""RMDL v1 checkpoints.

Layout (all little-endian)::

    b"RMDL" | u32 version | u32 height, width, channels | u32 n_layers
    n_layers x (u32 length | length bytes of layer record)
    float32 payload: every layer's tensors in layer order

Layer records start with a one-byte kind code followed by the kind's
hyper-parameters; tensor shapes follow from those, so the payload carries
no per-tensor headers.
"""
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError, TruncatedFileError
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax
from .model import NetworkModel

MAGIC = b"RMDL"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")

_CODES = {Conv2D: 1, BatchNorm: 2, ReLU: 3, MaxPool: 4, Dropout: 5, Flatten: 6, Dense: 7, Softmax: 8}
_PADDING = {"same": 0, "valid": 1}


def _record(layer):
    code = struct.pack("<B", _CODES[type(layer)])
    if isinstance(layer, Conv2D):
        return code + struct.pack("<IIIIB", layer.in_channels, layer.out_channels, layer.kernel, layer.stride,
                                  _PADDING[layer.padding])
    if isinstance(layer, BatchNorm):
        return code + struct.pack("<Idd", layer.channels, layer.eps, layer.momentum)
    if isinstance(layer, MaxPool):
        return code + struct.pack("<II", layer.pool, layer.stride)
    if isinstance(layer, Dropout):
        return code + struct.pack("<d", layer.rate)
    if isinstance(layer, Dense):
        return code + struct.pack("<II", layer.in_features, layer.units)
    return code


def _layer_from(record):
    code = record[0]
    body = record[1:]
    if code == 1:
        i, o, k, s, pad = struct.unpack("<IIIIB", body)
        return Conv2D(i, o, k, s, "same" if pad == 0 else "valid")
    if code == 2:
        c, eps, mom = struct.unpack("<Idd", body)
        return BatchNorm(c, eps, mom)
    if code == 3:
        return ReLU()
    if code == 4:
        return MaxPool(*struct.unpack("<II", body))
    if code == 5:
        return Dropout(*struct.unpack("<d", body))
    if code == 6:
        return Flatten()
    if code == 7:
        return Dense(*struct.unpack("<II", body))
    if code == 8:
        return Softmax()
    raise CheckpointFormatError(f"unknown layer code {code}")


def model_bytes(model):
    h, w, c = model.input_shape
    parts = [HEADER.pack(MAGIC, VERSION, h, w, c, len(model.layers))]
    for layer in model.layers:
        rec = _record(layer)
        parts.append(struct.pack("<I", len(rec)) + rec)
    for _, _, a in model.state():
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(model, path):
    """Write atomically: the bytes land in a sibling temp file that replaces ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(model_bytes(model))
    os.replace(tmp, path)


def load_model(path):
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        if data[:4] != MAGIC[:len(data[:4])]:
            raise CheckpointFormatError(f"{path}: bad magic")
        raise TruncatedFileError(f"{path}: truncated header")
    magic, version, h, w, c, n_layers = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    pos = HEADER.size
    layers = []
    for _ in range(n_layers):
        if pos + 4 > len(data):
            raise TruncatedFileError(f"{path}: truncated layer records")
        (n,) = struct.unpack_from("<I", data, pos)
        rec = data[pos + 4:pos + 4 + n]
        if len(rec) < n or n == 0:
            raise TruncatedFileError(f"{path}: truncated layer record")
        try:
            layers.append(_layer_from(rec))
        except struct.error as exc:
            raise CheckpointFormatError(f"{path}: malformed layer record") from exc
        pos += 4 + n
    model = NetworkModel(layers, (h, w, c))
    for i, name, a in model.state():
        nbytes = a.size * 4
        if pos + nbytes > len(data):
            raise TruncatedFileError(f"{path}: parameter payload truncated")
        model.layers[i].params[name] = np.frombuffer(data, dtype="<f4", count=a.size, offset=pos).reshape(a.shape).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return model.eval()
