import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asvguard.signal import (ComplexSpectrogram, SignalLengthError, StftConfig,
                             frame_signal, griffin_lim, istft, log_mel_features, mel_filterbank,
                             spectral_convergence, stft)

CFG = StftConfig()


def test_config_defaults():
    assert (CFG.win_length, CFG.hop_length, CFG.n_fft, CFG.n_bins) == (400, 160, 512, 257)


def test_config_rejects_short_fft():
    with pytest.raises(ValueError):
        StftConfig(n_fft=256)


@pytest.mark.parametrize("n, frames", [(1600, 8), (400, 1), (559, 1), (560, 2)])
def test_frame_count(n, frames):
    assert frame_signal(np.zeros(n), CFG).shape == (frames, 400)


def test_frame_too_short():
    with pytest.raises(SignalLengthError):
        frame_signal(np.zeros(399), CFG)


def test_frames_are_windowed():
    x = np.arange(1600, dtype=float)
    f = frame_signal(x, CFG)
    np.testing.assert_array_equal(f[2], x[320:720] * np.hamming(400))


def test_stft_dc():
    c = 0.3
    spec = stft(np.full(1600, c), CFG)
    np.testing.assert_allclose(spec.magnitude[:, 0], c * np.hamming(400).sum(), rtol=1e-12)
    assert np.all(spec.magnitude.argmax(axis=1) == 0)


def test_stft_sinusoid_peak_bin():
    k = 37
    n = np.arange(16000)
    x = 0.5 * np.sin(2 * np.pi * k * CFG.sample_rate / CFG.n_fft * n / CFG.sample_rate)
    mag = stft(x, CFG).magnitude
    # oracle: direct DFT sum of the first windowed frame
    frame = x[:400] * np.hamming(400)
    direct = np.abs(np.exp(-2j * np.pi * np.outer(np.arange(257), np.arange(400)) / 512) @ frame)
    np.testing.assert_allclose(mag[0], direct, atol=1e-10)
    assert mag.mean(axis=0).argmax() == k


def test_stft_zero():
    assert not stft(np.zeros(1000), CFG).magnitude.any()


def test_spectrogram_shape_check():
    with pytest.raises(ValueError):
        ComplexSpectrogram(np.zeros((2, 3)), np.zeros((3, 2)))


@pytest.mark.parametrize("n", [1600, 16000, 48000])
def test_istft_round_trip(n):
    x = np.random.default_rng(n).uniform(-1, 1, n)
    y = istft(stft(x, CFG), CFG)
    covered = CFG.signal_length(CFG.n_frames(n))
    assert len(y) == covered
    assert np.max(np.abs(y - x[:covered])) < 1e-6


def test_istft_zero():
    assert not istft(np.zeros((5, 257), complex), CFG).any()


def test_istft_single_frame_closed_form():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(257) + 1j * rng.standard_normal(257)
    w = np.hamming(400)
    expected = np.fft.irfft(z, 512)[:400] * w / (w * w)
    np.testing.assert_allclose(istft(z[None, :], CFG), expected, rtol=1e-12, atol=1e-14)


def test_istft_shape_mismatch():
    with pytest.raises(ValueError):
        istft(np.zeros((3, 200), complex), CFG)


def test_mel_filterbank_shape_and_sign():
    fb = mel_filterbank(16000, 512, 64)
    assert fb.weights.shape == (64, 257)
    assert np.all(fb.weights >= 0)
    assert np.all(fb.weights.max(axis=1) > 0)


def test_mel_filterbank_unimodal_rows():
    for row in mel_filterbank(16000, 512, 64).weights:
        nz = row[row > 0]
        peak = nz.argmax()
        assert np.all(np.diff(nz[:peak + 1]) >= 0)
        assert np.all(np.diff(nz[peak:]) <= 0)


def test_mel_filterbank_linearity():
    fb = mel_filterbank(16000, 512, 64)
    np.testing.assert_allclose(fb.weights @ np.ones(257), fb.weights.sum(axis=1))


def test_mel_filterbank_covers_band():
    fb = mel_filterbank(16000, 512, 64, f_min=20, f_max=8000)
    freqs = np.arange(257) * 16000 / 512
    interior = (freqs > 20) & (freqs < 8000)
    assert np.all(fb.weights[:, interior].max(axis=0) > 0)


def test_mel_centers_equally_spaced_in_mel():
    fb = mel_filterbank(16000, 4096, 10, 100, 4000)
    freqs = np.arange(fb.weights.shape[1]) * 16000 / 4096
    centers = freqs[fb.weights.argmax(axis=1)]
    mel = 2595 * np.log10(1 + centers / 700)
    np.testing.assert_allclose(np.diff(mel), np.diff(mel).mean(), rtol=0.05)


@pytest.mark.parametrize("lo, hi", [(100, 50), (0, 9000), (-1, 100)])
def test_mel_filterbank_bad_range(lo, hi):
    with pytest.raises(ValueError):
        mel_filterbank(16000, 512, 64, lo, hi)


def test_log_mel_zero_signal():
    fb = mel_filterbank(16000, 512, 64)
    feats = log_mel_features(np.zeros(1600), CFG, fb, 1e-10)
    np.testing.assert_array_equal(feats.values, np.log(1e-10))
    assert feats.values.shape == (8, 64)


def test_log_mel_scaling_by_two():
    fb = mel_filterbank(16000, 512, 64)
    x = np.random.default_rng(0).uniform(-0.4, 0.4, 4000)
    a = log_mel_features(x, CFG, fb).values
    b = log_mel_features(2 * x, CFG, fb).values
    loud = a > np.log(1e-10) + 10
    assert loud.mean() > 0.9
    np.testing.assert_allclose((b - a)[loud], np.log(4), atol=1e-6)


def test_log_mel_finite_difference_convergence():
    fb = mel_filterbank(16000, 512, 64)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, 800)
    i, cell = 300, (0, 10)
    errs = []
    for h in (1e-2, 1e-3, 1e-4):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (log_mel_features(xp, CFG, fb).values[cell] - log_mel_features(xm, CFG, fb).values[cell]) / (2 * h)
        errs.append(fd)
    # successive estimates contract (second-order convergence)
    assert abs(errs[2] - errs[1]) < 0.1 * abs(errs[1] - errs[0]) + 1e-9


def test_griffin_lim_zero():
    assert not griffin_lim(np.zeros((8, 257)), CFG, 4).any()


def test_griffin_lim_rejects_nonfinite():
    m = np.ones((4, 257))
    m[0, 0] = np.nan
    with pytest.raises(ValueError):
        griffin_lim(m, CFG)


def test_griffin_lim_monotone_convergence():
    x = np.random.default_rng(5).standard_normal(4000) * 0.1
    mag = stft(x, CFG).magnitude
    trace = []
    griffin_lim(mag, CFG, 40, trace=trace)
    assert len(trace) == 40
    assert np.all(np.diff(trace) <= 1e-9)


def test_griffin_lim_tone():
    n = np.arange(16000)
    x = 0.5 * np.sin(2 * np.pi * 440 * n / 16000)
    mag = stft(x, CFG).magnitude
    y = griffin_lim(mag, CFG, 64)
    assert np.max(np.abs(y)) <= 1.0
    assert spectral_convergence(y, mag, CFG) < 0.05


def test_griffin_lim_peak_normalized():
    mag = stft(np.random.default_rng(2).uniform(-1, 1, 3200), CFG).magnitude * 50
    assert np.max(np.abs(griffin_lim(mag, CFG, 3))) <= 1.0 + 1e-12


@settings(max_examples=25, deadline=None)
@given(n=st.integers(400, 3000), seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    y = istft(stft(x, CFG), CFG)
    assert np.max(np.abs(y - x[:len(y)])) < 1e-6
    assert len(x) - len(y) < CFG.hop_length
