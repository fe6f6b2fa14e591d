import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from asvguard.purify import (Purifier, PurifierSpecError, gaussian_filter, gaussian_kernel,
                             gaussian_noise_sigma, mean_filter, median_filter, parse_purifier,
                             parse_roster, purify, quantize_sample, spectral_reconstruct)
from asvguard.signal import SignalLengthError

from conftest import noise

unit = st.floats(-1, 1, allow_nan=False)


def test_mean_filter_reflect():
    np.testing.assert_allclose(mean_filter([0, 3, 0], 3), [1, 1, 1])


def test_median_removes_impulse():
    np.testing.assert_array_equal(median_filter([0, 9, 0, 0, 0], 3), [0, 0, 0, 0, 0])


def test_even_kernel_window():
    # k = 4 covers [i-1, i+2]
    x = np.array([0.0, 0, 0, 8, 0, 0, 0])
    np.testing.assert_allclose(mean_filter(x, 4), [0, 2, 2, 2, 2, 0, 0])
    # even median is the mean of the two middle order statistics; padded input is 1 1 2 4 8 8 4
    np.testing.assert_allclose(median_filter([1.0, 2, 4, 8], 4), [1.5, 3, 6, 6])


def test_kernel_one_is_identity():
    x = noise(50)
    np.testing.assert_array_equal(mean_filter(x, 1), x)
    np.testing.assert_array_equal(median_filter(x, 1), x)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 3.7])
def test_gaussian_kernel_normalized(sigma):
    k = gaussian_kernel(sigma)
    assert abs(k.sum() - 1) < 1e-12
    assert len(k) == 2 * int(4 * sigma + 0.5) + 1


@pytest.mark.parametrize("f", [lambda x: mean_filter(x, 4), lambda x: median_filter(x, 4),
                               lambda x: gaussian_filter(x, 2.0)])
def test_constant_fixed_point(f):
    np.testing.assert_allclose(f(np.full(40, 0.3)), 0.3, atol=1e-15)


@settings(max_examples=50)
@given(arrays(np.float64, 30, elements=st.floats(-0.5, 0.5)),
       arrays(np.float64, 30, elements=st.floats(-0.5, 0.5)), st.floats(-1, 1), st.floats(-1, 1))
def test_linear_filters(x, y, a, b):
    for f in (lambda v: mean_filter(v, 4), lambda v: gaussian_filter(v, 2.0)):
        np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-9)


@pytest.mark.parametrize("x, q, want", [(0.03, 16, 0.0), (1.0, 16, 1.0), (1.0, 7, 1.0),
                                        (-0.09375, 16, -0.125), (0.09375, 16, 0.125)])
def test_quantize_examples(x, q, want):
    assert quantize_sample(x, q) == want


@given(arrays(np.float64, 25, elements=unit), st.integers(2, 1000))
def test_quantize_idempotent(x, q):
    once = quantize_sample(x, q)
    assert np.array_equal(quantize_sample(once, q), once)
    assert np.all(np.abs(once) <= 1)


@pytest.mark.parametrize("power, snr, var", [(0.5, 20, 0.005), (1.0, 0, 1.0)])
def test_noise_sigma(power, snr, var):
    wave = np.full(100, np.sqrt(power))
    assert gaussian_noise_sigma(wave, snr) ** 2 == pytest.approx(var, rel=1e-12)


def test_noise_sigma_zero_power():
    with pytest.raises(ValueError):
        gaussian_noise_sigma(np.zeros(10), 20)


@pytest.mark.parametrize("snr", [15.0, 20.0, 25.0])
def test_empirical_snr(snr):
    x = noise(16000, 2, 0.1)
    y = purify(Purifier("gaussian_noise", snr_db=snr, seed=1), x)
    measured = 10 * np.log10(np.mean(x ** 2) / np.mean((y - x) ** 2))
    assert abs(measured - snr) < 0.5


ROSTER = [Purifier("gaussian_noise", snr_db=20, seed=3), Purifier("mean_filter", kernel=4),
          Purifier("median_filter", kernel=4), Purifier("gaussian_filter", sigma=2.0),
          Purifier("quantize", q=16), Purifier("spectral_reconstruct", iterations=4)]


@pytest.mark.parametrize("p", ROSTER, ids=lambda p: p.name)
def test_shape_range_determinism(p):
    x = np.clip(noise(4000, 7, 0.6), -1, 1)
    y = purify(p, x)
    assert y.shape == x.shape
    assert np.all(np.abs(y) <= 1)
    np.testing.assert_array_equal(purify(p, x), y)


def test_seed_only_affects_noise():
    x = noise(2000, 8)
    a = purify(Purifier("gaussian_noise", seed=1), x)
    b = purify(Purifier("gaussian_noise", seed=2), x)
    assert not np.array_equal(a, b)
    for kind in ("mean_filter", "median_filter", "gaussian_filter", "quantize"):
        np.testing.assert_array_equal(purify(Purifier(kind, seed=1), x), purify(Purifier(kind, seed=2), x))


def test_spectral_length_and_zero_input():
    x = noise(5123, 1)
    assert len(spectral_reconstruct(x, iterations=2)) == 5123
    np.testing.assert_array_equal(spectral_reconstruct(np.zeros(4000), iterations=2), 0.0)
    with pytest.raises(SignalLengthError):
        spectral_reconstruct(np.zeros(100), iterations=2)


def test_spectral_keeps_speaker(model, voices):
    x, e = voices[0][1], voices[0][0]
    y = spectral_reconstruct(x, model.stft_cfg, iterations=32)
    assert abs(model.score(y, e) - model.score(x, e)) < 0.1


@pytest.mark.parametrize("text, name", [
    ("gaussian_noise:snr=25:seed=7", "gaussian_noise:snr=25:seed=7"),
    ("median:kernel=4", "median:kernel=4"),
    ("quantize:q=16", "quantize:q=16"),
    ("spectral:iters=32", "spectral:iters=32"),
    ("mean:kernel=3", "mean:kernel=3"),
    ("gauss:sigma=2", "gaussian_filter:sigma=2"),
])
def test_parse_round_trip(text, name):
    p = parse_purifier(text)
    assert p.name == name
    assert parse_purifier(p.name) == p


@pytest.mark.parametrize("text", ["wobble", "median:kernel=0", "quantize:q=1", "median:q=3",
                                  "quantize:q=x", "spectral:iters", "gauss:sigma=0"])
def test_parse_errors(text):
    with pytest.raises(PurifierSpecError):
        parse_purifier(text)


def test_roster_errors():
    assert len(parse_roster("median:kernel=4, quantize:q=16")) == 2
    with pytest.raises(PurifierSpecError):
        parse_roster("")
    with pytest.raises(PurifierSpecError):
        parse_roster("quantize:q=16,quantize:q=16")
