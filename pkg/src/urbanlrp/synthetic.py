"""Seeded synthetic sound-event corpus used for desk-scale runs and fixtures.

Four classes: steady 500 Hz and 2000 Hz tones, linear chirps and white-noise
bursts, each over a faint noise floor.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import AudioClip, write_metadata, write_wav
from .rng import Xoshiro256

CLASSES = ("tone_500", "tone_2000", "chirp", "noise_burst")
TONE_HZ = {0: 500.0, 1: 2000.0}
SAMPLE_RATE = 8000
DURATION = 1.0
FLOOR = 0.003

DESK_FEATURES = {"n_mels": 64, "fft_size": 256, "hop": 64}
DESK_IMAGE_SIZE = 64
DESK_CHANNELS = (32, 32, 64)
DESK_DENSE = 128


def make_clip(class_id, rng, sample_rate=SAMPLE_RATE, duration=DURATION):
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    x = FLOOR * rng.normal((n,))
    if class_id in TONE_HZ:
        amp = 0.3 + 0.6 * rng.random()
        x += amp * np.sin(2 * np.pi * TONE_HZ[class_id] * t + 2 * np.pi * rng.random())
    elif class_id == 2:
        f0 = 200.0 + 800.0 * rng.random()
        f1 = 2500.0 + 1300.0 * rng.random()
        if rng.random() < 0.5:
            f0, f1 = f1, f0
        amp = 0.3 + 0.6 * rng.random()
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t * t)
        x += amp * np.sin(phase)
    elif class_id == 3:
        length = int(n * (0.2 + 0.4 * rng.random()))
        start = rng.below(n - length + 1)
        x[start:start + length] += (0.1 + 0.2 * rng.random()) * rng.normal((length,))
    else:
        raise ValueError(f"unknown synthetic class {class_id}")
    return AudioClip(np.clip(x, -1.0, 1.0), sample_rate)


def synthetic_clips(per_class=200, seed=0, sample_rate=SAMPLE_RATE, duration=DURATION):
    """List of (clip, class id), classes interleaved so any prefix stays balanced."""
    rng = Xoshiro256(seed)
    out = []
    for _ in range(per_class):
        for c in range(len(CLASSES)):
            out.append((make_clip(c, rng, sample_rate, duration), c))
    return out


def write_corpus(root, per_class=200, seed=0, sample_rate=SAMPLE_RATE, duration=DURATION):
    """WAV files under ``root/audio/fold1`` plus ``root/metadata.csv``; returns the metadata path."""
    root = Path(root)
    folder = root / "audio" / "fold1"
    folder.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (clip, c) in enumerate(synthetic_clips(per_class, seed, sample_rate, duration)):
        name = f"{i:05d}-{CLASSES[c]}.wav"
        write_wav(folder / name, clip.samples, clip.sample_rate)
        rows.append((name, 1, c, CLASSES[c]))
    meta = root / "metadata.csv"
    write_metadata(meta, rows)
    return meta
