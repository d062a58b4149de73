import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanlrp.dataset import AudioClip
from urbanlrp.dsp import (
    FeatureImage, Spectrogram, amplitude_to_db, cqt_frequencies, cqt_quality, cqt_spectrogram, cqt_window_lengths,
    hann, hz_to_mel, mel_filterbank, mel_spectrogram, spectrogram_row_to_image_row, stft_power, to_feature_image,
)
from urbanlrp.errors import ParameterError
from urbanlrp.formats import read_fmat, read_netpbm, write_fmat, write_pgm

SR = 44100


def sine(freq, seconds=4.0, sr=SR, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


def brute_dft_power(frame):
    n = np.arange(frame.size)
    k = np.arange(frame.size // 2 + 1)
    return np.abs(np.exp(-2j * np.pi * np.outer(k, n) / frame.size) @ frame) ** 2


# --- stft -------------------------------------------------------------------

def test_stft_zero_clip():
    p = stft_power(AudioClip(np.zeros(4096), SR), 1024, 256)
    assert p.shape == (513, 1 + 4096 // 256)
    assert np.all(p == 0)


def test_stft_matches_brute_force_dft(rng):
    x = rng.uniform(-1, 1, 2000)
    n_fft, hop = 256, 100
    p = stft_power(AudioClip(x, 8000), n_fft, hop)
    padded = np.pad(x, n_fft // 2, mode="reflect")
    for t in (0, 7, p.shape[1] - 1):
        frame = padded[t * hop:t * hop + n_fft] * hann(n_fft)
        np.testing.assert_allclose(p[:, t], brute_dft_power(frame), rtol=1e-9, atol=1e-9)


def test_stft_bin_centred_sinusoid_argmax():
    # a cosine of 4097 samples is symmetric about both ends, so reflect padding
    # continues it exactly and every frame sees the same pure bin-37 sinusoid
    n_fft, k0 = 512, 37
    n = np.arange(4097)
    clip = AudioClip(0.5 * np.cos(2 * np.pi * k0 * n / n_fft), 8000)
    p = stft_power(clip, n_fft, 128)
    assert np.all(p.argmax(axis=0) == k0)
    padded = np.pad(clip.samples, n_fft // 2, mode="reflect")
    for t in (0, 5, p.shape[1] - 1):
        assert int(np.argmax(brute_dft_power(padded[t * 128:t * 128 + n_fft] * hann(n_fft)))) == k0


def test_stft_parseval_per_frame(rng):
    x = rng.normal(size=6000)
    n_fft, hop = 1024, 256
    p = stft_power(AudioClip(np.clip(x, -1, 1), 8000), n_fft, hop)
    padded = np.pad(np.clip(x, -1, 1), n_fft // 2, mode="reflect")
    w = hann(n_fft)
    for t in range(p.shape[1]):
        energy = np.sum((padded[t * hop:t * hop + n_fft] * w) ** 2)
        col = p[:, t]
        full = col[0] + col[-1] + 2 * col[1:-1].sum()
        assert abs(full / n_fft - energy) <= 1e-6 * energy


def test_stft_rejects_short_clip():
    with pytest.raises(ParameterError):
        stft_power(AudioClip(np.zeros(100), SR), 256, 64)


def test_stft_rejects_non_power_of_two():
    with pytest.raises(ParameterError):
        stft_power(AudioClip(np.zeros(4000), SR), 1000, 100)


# --- mel --------------------------------------------------------------------

def test_mel_scale_values():
    assert hz_to_mel(1000) == pytest.approx(999.99, abs=0.01)
    assert abs(hz_to_mel(1000) - 1000) < 0.1
    assert hz_to_mel(0) == 0


def count_local_maxima(row):
    """Peaks of a sampled triangle, plateaus counted once."""
    d = np.sign(np.diff(row))
    d = d[d != 0]
    return int(np.sum((d[:-1] > 0) & (d[1:] < 0))) + int(d.size > 0 and d[-1] > 0) + int(d.size > 0 and d[0] < 0)


def test_mel_filterbank_rows_unimodal():
    fb = mel_filterbank(128, 2048, SR, 0, SR / 2)
    assert fb.shape == (128, 1025)
    assert np.all(fb >= 0)
    assert all(count_local_maxima(r) == 1 for r in fb)


def test_mel_filterbank_covers_interior_bins():
    fb = mel_filterbank(128, 2048, SR, 0, SR / 2)
    peaks = fb.argmax(axis=1)
    covered = fb[:, peaks[0]:peaks[-1] + 1].max(axis=0)
    assert np.all(covered > 0)


@pytest.mark.parametrize("args", [(128, 2048, SR, 100, 100), (128, 2048, SR, 0, 30000), (1, 2048, SR, 0, 8000)])
def test_mel_filterbank_parameter_errors(args):
    with pytest.raises(ParameterError):
        mel_filterbank(*args)


def test_mel_spectrogram_shape_and_zero_clip():
    spec = mel_spectrogram(AudioClip(np.zeros(4 * SR), SR))
    assert spec.shape == (128, 345)
    assert spec.kind == "mel"
    assert np.all(spec.values == spec.values[0, 0])


def test_mel_spectrogram_tone_row():
    spec = mel_spectrogram(sine(1000))
    expected = int(np.argmin(np.abs(spec.bin_frequencies - 1000)))
    assert int(spec.values.mean(axis=1).argmax()) == expected
    assert np.mean(spec.values.argmax(axis=0) == expected) >= 0.9
    assert np.all(np.diff(spec.bin_frequencies) > 0)


# --- cqt --------------------------------------------------------------------

def test_cqt_geometry():
    f = cqt_frequencies()
    assert f[12] / f[0] == 2.0
    ratios = f[1:] / f[:-1]
    np.testing.assert_allclose(ratios, 2 ** (1 / 12), rtol=4 * np.finfo(float).eps)
    n = cqt_window_lengths(SR)
    assert np.all(np.diff(n) < 0)
    assert n[0] == int(np.ceil(cqt_quality() * SR / 32.70))


def test_cqt_tone_bin_440():
    spec = cqt_spectrogram(sine(440))
    k = round(12 * np.log2(440 / 32.70))
    assert k == 45
    assert int(spec.values.mean(axis=1).argmax()) == k
    assert np.mean(spec.values.argmax(axis=0) == k) >= 0.9
    assert spec.shape == (84, 345) and spec.kind == "cqt"


def test_cqt_kernel_matches_direct_inner_product():
    clip = sine(440, seconds=1.0, sr=8000, amp=1.0)
    from urbanlrp.dsp import cqt_magnitude
    mag = cqt_magnitude(clip, n_bins=60, hop=512)
    k, t = 45, 8
    f = 32.70 * 2 ** (k / 12)
    nk = int(np.ceil(cqt_quality() * 8000 / f))
    w = hann(nk)
    total = 0j
    for i in range(nk):
        pos = t * 512 - nk // 2 + i
        if 0 <= pos < len(clip):
            total += clip.samples[pos] * w[i] * np.exp(-2j * np.pi * f * (i - nk // 2) / 8000)
    assert mag[k, t] == pytest.approx(abs(total) / w.sum(), rel=1e-9)
    assert mag[k, t] == pytest.approx(0.5, abs=0.02)


def test_cqt_nyquist_guard():
    with pytest.raises(ParameterError):
        cqt_spectrogram(AudioClip(np.zeros(8000), 4000))


# --- dB and images ------------------------------------------------------------

def test_amplitude_to_db_examples():
    assert np.all(amplitude_to_db(np.full((3, 4), 2.5)) == 0)
    np.testing.assert_allclose(amplitude_to_db(np.array([1.0, 0.1]), 80), [0.0, -10.0])
    assert amplitude_to_db(np.array([1.0, 0.0]))[1] == -80


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50), st.floats(1, 120))
def test_amplitude_to_db_range(values, top_db):
    out = amplitude_to_db(np.array(values), top_db)
    assert out.max() == 0
    assert out.min() >= -top_db


def _spec(values, top_db=80.0):
    return Spectrogram(np.asarray(values, dtype=float), "mel", np.arange(1, len(values) + 1.0), 512, top_db)


def test_feature_image_constant():
    img = to_feature_image(_spec(np.full((128, 345), -20.0)))
    assert img.pixels.shape == (220, 220, 3)
    np.testing.assert_allclose(img.pixels, 60 / 80)


def test_feature_image_identity_resize(rng):
    v = rng.uniform(-80, 0, (220, 220))
    img = to_feature_image(_spec(v))
    for c in range(3):
        np.testing.assert_allclose(img.pixels[..., c], ((v + 80) / 80)[::-1], atol=1e-12)


def test_feature_image_range_and_orientation():
    spec = mel_spectrogram(sine(1000))
    img = to_feature_image(spec)
    assert img.pixels.shape == (220, 220, 3)
    assert img.pixels.min() >= 0 and img.pixels.max() <= 1
    assert np.array_equal(img.pixels[..., 0], img.pixels[..., 2])
    row = int(np.argmin(np.abs(spec.bin_frequencies - 1000)))
    expected = spectrogram_row_to_image_row(row, 128, 220)
    assert abs(int(img.gray.mean(axis=1).argmax()) - expected) <= 2


@settings(max_examples=30, deadline=None)
@given(st.floats(-80, 0), st.floats(-80, 0))
def test_feature_image_monotone_for_constants(a, b):
    lo, hi = sorted((a, b))
    img_lo = to_feature_image(_spec(np.full((30, 40), lo)), 32)
    img_hi = to_feature_image(_spec(np.full((30, 40), hi)), 32)
    assert np.all(img_hi.pixels >= img_lo.pixels)


def test_feature_image_requires_three_channels():
    with pytest.raises(ParameterError):
        FeatureImage(np.zeros((4, 4, 1)))


def test_fmat_and_pgm_roundtrip(tmp_path, rng):
    m = rng.normal(size=(7, 5)).astype(np.float32)
    write_fmat(tmp_path / "m.fmat", m)
    data = (tmp_path / "m.fmat").read_bytes()
    assert data[:4] == b"FMAT" and len(data) == 12 + 35 * 4
    assert np.array_equal(read_fmat(tmp_path / "m.fmat"), m)
    g = rng.uniform(0, 1, (6, 9))
    write_pgm(tmp_path / "g.pgm", g)
    assert (tmp_path / "g.pgm").read_bytes().startswith(b"P5\n9 6\n255\n")
    assert np.array_equal(read_netpbm(tmp_path / "g.pgm"), np.rint(g * 255).astype(np.uint8))
