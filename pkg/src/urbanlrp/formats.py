"""Binary dump formats: FMAT float matrices and Netpbm (PGM/PPM) images."""
import struct
from pathlib import Path

import numpy as np

from .errors import TruncatedFileError

FMAT_MAGIC = b"FMAT"


class FormatError(ValueError):
    pass


def fmat_bytes(matrix):
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError("FMAT holds 2-D matrices only")
    rows, cols = m.shape
    return FMAT_MAGIC + struct.pack("<II", rows, cols) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def write_fmat(path, matrix):
    Path(path).write_bytes(fmat_bytes(matrix))


def read_fmat(path):
    data = Path(path).read_bytes()
    if data[:4] != FMAT_MAGIC:
        raise FormatError(f"{path}: bad FMAT magic")
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", data, 4)
    need = 12 + rows * cols * 4
    if len(data) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", count=rows * cols, offset=12).reshape(rows, cols).astype(np.float32)


def to_uint8(x):
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray01):
    img = to_uint8(gray01)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_ppm(path, rgb):
    img = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_netpbm(path):
    """Read a binary P5/P6 file written by this module; returns uint8 array."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise FormatError(f"{path}: unsupported netpbm header")
    channels = 3 if magic == b"P6" else 1
    pix = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * channels)
    return pix.reshape(h, w, channels) if channels == 3 else pix.reshape(h, w)
