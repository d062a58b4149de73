"""Audio ingestion, clip homogenization and dataset splitting."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, LabelError, ParameterError, SchemaError, TruncatedFileError, WavFormatError
from .rng import Xoshiro256

URBANSOUND_CLASSES = (
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
)

METADATA_COLUMNS = ("slice_file_name", "fold", "classID", "class")

SPLIT_FRACTIONS = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class ClassLabel:
    id: int
    name: str

    @classmethod
    def from_id(cls, class_id, names=URBANSOUND_CLASSES):
        if not 0 <= class_id < len(names):
            raise LabelError(f"class id {class_id} outside [0, {len(names) - 1}]")
        return cls(int(class_id), names[class_id])

    @classmethod
    def from_name(cls, name, names=URBANSOUND_CLASSES):
        try:
            return cls(names.index(name), name)
        except ValueError:
            raise LabelError(f"unknown class name {name!r}") from None


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ParameterError("clip samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("clip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ParameterError("sample rate must be positive")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class IndexEntry:
    file_path: str
    label: ClassLabel
    fold: str


@dataclass
class DatasetIndex:
    entries: list[IndexEntry]
    class_names: tuple[str, ...] = URBANSOUND_CLASSES
    counts_per_class: dict[ClassLabel, int] = field(init=False)

    def __post_init__(self):
        self.counts_per_class = {ClassLabel(i, n): 0 for i, n in enumerate(self.class_names)}
        for e in self.entries:
            if not 0 <= e.label.id < len(self.class_names):
                raise LabelError(f"label id {e.label.id} outside class set")
            self.counts_per_class[e.label] += 1

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self):
        return np.array([e.label.id for e in self.entries], dtype=np.int64)

    def subset(self, indices):
        return DatasetIndex([self.entries[i] for i in indices], self.class_names)


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def tag_of(self, n):
        tags = np.empty(n, dtype=object)
        tags[self.train] = "train"
        tags[self.validation] = "validation"
        tags[self.test] = "test"
        return tags


def load_metadata(csv_path, class_names=URBANSOUND_CLASSES):
    """Read an UrbanSound8K-style metadata CSV.

    File paths are returned relative to the audio root as ``fold<k>/<name>``.
    """
    entries = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METADATA_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise SchemaError(f"{csv_path}: missing column(s) {', '.join(missing)}")
        for row_number, row in enumerate(reader, start=2):
            try:
                class_id = int(row["classID"])
            except ValueError:
                raise LabelError(f"row {row_number}: classID {row['classID']!r} is not an integer") from None
            if not 0 <= class_id < len(class_names):
                raise LabelError(f"row {row_number}: classID {class_id} outside [0, {len(class_names) - 1}]")
            fold = row["fold"].strip()
            entries.append(IndexEntry(f"fold{fold}/{row['slice_file_name']}", ClassLabel(class_id, class_names[class_id]), fold))
    return DatasetIndex(entries, tuple(class_names))


def write_metadata(csv_path, rows):
    """Write (slice_file_name, fold, classID, class) rows with the standard header."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_COLUMNS)
        writer.writerows(rows)


_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def load_wav(path):
    """Decode a PCM16 / float32 RIFF file into a mono clip."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == _EXTENSIBLE and len(body) >= 26:
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            if len(body) < size:
                raise TruncatedFileError(f"{path}: data chunk declares {size} bytes, found {len(body)}")
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise TruncatedFileError(f"{path}: missing data chunk")
    codec, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: {channels} channels unsupported")
    if codec == _PCM and bits == 16:
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif codec == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"{path}: codec {codec} at {bits} bits unsupported")
    if samples.size % channels:
        raise TruncatedFileError(f"{path}: partial sample frame")
    samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples, rate)


def write_wav(path, samples, sample_rate, *, float32=False):
    """Write mono or (n, 2) stereo audio as PCM16 (default) or float32."""
    x = np.asarray(samples, dtype=np.float64)
    channels = 1 if x.ndim == 1 else x.shape[1]
    if float32:
        payload = x.astype("<f4").tobytes()
        codec, bits = _IEEE_FLOAT, 32
    else:
        payload = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        codec, bits = _PCM, 16
    block = channels * bits // 8
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt = struct.pack("<4sIHHIIHH", b"fmt ", 16, codec, channels, sample_rate, sample_rate * block, block, bits)
    Path(path).write_bytes(header + fmt + struct.pack("<4sI", b"data", len(payload)) + payload)


RESAMPLE_TAPS = 64
KAISER_BETA = 8.6
RESAMPLE_ROLLOFF = 0.945


def _polyphase_table(up, down):
    half = RESAMPLE_TAPS // 2
    cutoff = RESAMPLE_ROLLOFF * min(1.0, up / down)
    k = np.arange(-half + 1, half + 1)
    frac = np.arange(up)[:, None] / up
    d = k[None, :] - frac
    window = np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (d / half) ** 2, 0.0, None))) / np.i0(KAISER_BETA)
    h = cutoff * np.sinc(cutoff * d) * window
    return k, h / h.sum(axis=1, keepdims=True)


def resample(clip, target_rate):
    """Kaiser-windowed sinc interpolation (64 taps per phase, beta 8.6)."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ParameterError("target rate must be positive")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    n_out = int(math.floor(len(clip) * target_rate / clip.sample_rate + 0.5))
    k, table = _polyphase_table(up, down)
    half = RESAMPLE_TAPS // 2
    padded = np.concatenate([np.zeros(half), clip.samples, np.zeros(half + 1)])
    out = np.empty(n_out)
    step = 65536
    for start in range(0, n_out, step):
        n = np.arange(start, min(start + step, n_out), dtype=np.int64)
        base, phase = np.divmod(n * down, up)
        taps = padded[base[:, None] + k[None, :] + half]
        out[start:start + n.size] = np.einsum("ij,ij->i", taps, table[phase])
    return AudioClip(out, target_rate)


def fix_length(clip, duration):
    """Truncate or zero-pad (at the end) to round(duration * rate) samples."""
    if duration <= 0:
        raise ParameterError("duration must be positive")
    n = int(math.floor(duration * clip.sample_rate + 0.5))
    x = clip.samples
    if x.size >= n:
        out = x[:n].copy()
    else:
        out = np.concatenate([x, np.zeros(n - x.size)])
    return AudioClip(out, clip.sample_rate)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_sizes(n):
    """(train, validation, test) sizes; training takes the rounding remainder."""
    n_val = _round_half_up(SPLIT_FRACTIONS[1] * n)
    n_test = _round_half_up(SPLIT_FRACTIONS[2] * n)
    return n - n_val - n_test, n_val, n_test


def split_dataset(index, seed):
    n = len(index)
    if n < 10:
        raise ParameterError("need at least 10 entries to split")
    perm = Xoshiro256(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    return SplitAssignment(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_val]),
        np.sort(perm[n_train + n_val:]),
    )


def class_weights(index):
    """Balanced weights N_total / (n_classes * N_c)."""
    total = len(index)
    n_classes = len(index.class_names)
    absent = [c.name for c, n in index.counts_per_class.items() if n == 0]
    if absent:
        raise ConfigurationError(f"classes absent from training data: {', '.join(absent)}")
    return {c: total / (n_classes * n) for c, n in index.counts_per_class.items()}


def weight_vector(weights):
    """Class weights as an array indexed by class id."""
    out = np.empty(len(weights))
    for label, w in weights.items():
        out[label.id] = w
    return out
