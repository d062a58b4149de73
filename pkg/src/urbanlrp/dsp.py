"""Spectrogram front-end: STFT power, Mel and constant-Q spectrograms, image conversion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError

IMAGE_SIZE = 220
TOP_DB = 80.0
AMIN = 1e-10

MEL_BANDS = 128
MEL_FFT = 2048
MEL_HOP = 512

CQT_FMIN = 32.70
CQT_BINS = 84
CQT_BINS_PER_OCTAVE = 12
CQT_HOP = 512


@dataclass
class Spectrogram:
    """dB-scaled time-frequency matrix; row 0 is the lowest frequency."""

    values: np.ndarray
    kind: str
    bin_frequencies: np.ndarray
    frame_hop: int
    top_db: float = TOP_DB

    @property
    def shape(self):
        return self.values.shape


@dataclass
class FeatureImage:
    """(H, W, 3) image in [0, 1]; row 0 holds the highest frequency."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ParameterError(f"feature image must be (H, W, 3), got {p.shape}")
        self.pixels = p

    @property
    def gray(self):
        return self.pixels[..., 0]


def _samples(clip):
    return clip.samples if hasattr(clip, "samples") else np.asarray(clip, dtype=np.float64)


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples, hop):
    return 1 + n_samples // hop


def stft_power(clip, fft_size=MEL_FFT, hop=MEL_HOP):
    """|X_k(t)|^2 of centred, reflect-padded, Hann-windowed frames; shape (bins, frames)."""
    x = _samples(clip)
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ParameterError("fft_size must be a power of two")
    if not 0 < hop <= fft_size:
        raise ParameterError("hop must lie in (0, fft_size]")
    if x.size < fft_size:
        raise ParameterError(f"clip has {x.size} samples, fewer than fft_size {fft_size}")
    padded = np.pad(x, fft_size // 2, mode="reflect")
    frames = sliding_window_view(padded, fft_size)[::hop][: frame_count(x.size, hop)]
    spec = np.fft.rfft(frames * hann(fft_size), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels, f_min, f_max):
    """Filter edge/peak frequencies: n_mels + 2 points equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def mel_filterbank(n_mels, fft_size, sample_rate, f_min=0.0, f_max=None):
    if f_max is None:
        f_max = sample_rate / 2
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise ParameterError("need 0 <= f_min < f_max <= sample_rate / 2")
    if n_mels < 2:
        raise ParameterError("n_mels must be at least 2")
    pts = mel_centers(n_mels, f_min, f_max)
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def amplitude_to_db(power, top_db=TOP_DB):
    """Power to dB relative to the matrix maximum, floored at -top_db."""
    p = np.asarray(power, dtype=np.float64)
    if np.any(p < 0):
        raise ParameterError("power entries must be non-negative")
    if top_db <= 0:
        raise ParameterError("top_db must be positive")
    ref = max(float(p.max()), AMIN)
    out = 10.0 * np.log10(np.maximum(p, AMIN)) - 10.0 * np.log10(ref)
    return np.maximum(out, -top_db)


def mel_spectrogram(clip, n_mels=MEL_BANDS, fft_size=MEL_FFT, hop=MEL_HOP, f_min=0.0, f_max=None, top_db=TOP_DB):
    sr = clip.sample_rate
    f_max = sr / 2 if f_max is None else f_max
    fb = mel_filterbank(n_mels, fft_size, sr, f_min, f_max)
    power = fb @ stft_power(clip, fft_size, hop)
    return Spectrogram(amplitude_to_db(power, top_db), "mel", mel_centers(n_mels, f_min, f_max)[1:-1], hop, top_db)


def cqt_frequencies(n_bins=CQT_BINS, f_min=CQT_FMIN, bins_per_octave=CQT_BINS_PER_OCTAVE):
    return f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)


def cqt_quality(bins_per_octave=CQT_BINS_PER_OCTAVE):
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


def cqt_window_lengths(sample_rate, n_bins=CQT_BINS, f_min=CQT_FMIN, bins_per_octave=CQT_BINS_PER_OCTAVE):
    q = cqt_quality(bins_per_octave)
    return np.ceil(q * sample_rate / cqt_frequencies(n_bins, f_min, bins_per_octave)).astype(np.int64)


def cqt_magnitude(clip, n_bins=CQT_BINS, f_min=CQT_FMIN, bins_per_octave=CQT_BINS_PER_OCTAVE, hop=CQT_HOP):
    """Direct constant-Q transform: one Hann-windowed inner product per (bin, frame).

    Each kernel is normalized by its window sum, so a unit-amplitude sinusoid
    at a bin's centre frequency reads about 0.5 in that bin.
    """
    x = _samples(clip)
    sr = clip.sample_rate
    freqs = cqt_frequencies(n_bins, f_min, bins_per_octave)
    if freqs[-1] >= sr / 2:
        raise ParameterError(f"top CQT bin {freqs[-1]:.1f} Hz reaches Nyquist {sr / 2} Hz")
    lengths = cqt_window_lengths(sr, n_bins, f_min, bins_per_octave)
    n_frames = frame_count(x.size, hop)
    pad = int(lengths.max())
    padded = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    out = np.empty((n_bins, n_frames))
    for k, (fk, nk) in enumerate(zip(freqs, lengths)):
        w = hann(nk)
        n = np.arange(nk) - nk // 2
        kernel = w * np.exp(-2j * np.pi * fk * n / sr) / w.sum()
        starts = pad + np.arange(n_frames) * hop - nk // 2
        frames = sliding_window_view(padded, nk)[starts]
        out[k] = np.abs(frames @ kernel)
    return out


def cqt_spectrogram(clip, n_bins=CQT_BINS, f_min=CQT_FMIN, bins_per_octave=CQT_BINS_PER_OCTAVE, hop=CQT_HOP, top_db=TOP_DB):
    mag = cqt_magnitude(clip, n_bins, f_min, bins_per_octave, hop)
    return Spectrogram(amplitude_to_db(mag ** 2, top_db), "cqt", cqt_frequencies(n_bins, f_min, bins_per_octave), hop, top_db)


def _linear_resize_matrix(n_in, n_out):
    """(n_out, n_in) interpolation weights with half-pixel centre alignment."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_bilinear(values, height, width):
    v = np.asarray(values, dtype=np.float64)
    return _linear_resize_matrix(v.shape[0], height) @ v @ _linear_resize_matrix(v.shape[1], width).T


def spectrogram_row_to_image_row(row, n_rows, size):
    """Image row whose centre maps onto a spectrogram row (after the vertical flip)."""
    pos = (row + 0.5) * size / n_rows - 0.5
    return size - 1 - pos


def to_feature_image(spec, size=IMAGE_SIZE):
    """Rescale dB to [0, 1], flip so low frequencies sit at the bottom, resize, replicate 3x."""
    v = np.asarray(spec.values, dtype=np.float64)
    if v.size == 0:
        raise ParameterError("empty spectrogram")
    scaled = np.clip((v + spec.top_db) / spec.top_db, 0.0, 1.0)
    gray = resize_bilinear(scaled[::-1], size, size)
    gray = np.clip(gray, 0.0, 1.0)
    return FeatureImage(np.repeat(gray[:, :, None], 3, axis=2))


def extract(clip, kind, **params):
    if kind == "mel":
        return mel_spectrogram(clip, **params)
    if kind == "cqt":
        return cqt_spectrogram(clip, **params)
    raise ParameterError(f"unknown feature kind {kind!r}")
