import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cvoc.envelopes import (EnvelopeKind, TemporalEnvelope, amplitude_envelope, cepstral_upper_envelope, estimate,
                            hilbert_envelope, modulate, rms_normalized, triangular_envelope, true_envelope)

DB = 20 / np.log(10)
frames = arrays(float, st.integers(32, 256), elements=st.floats(-1, 1, allow_nan=False))


def test_amplitude_constant_and_zero():
    e = amplitude_envelope(np.full(100, 0.3)).values
    assert np.allclose(e[10:-10], 0.3)
    assert np.all(amplitude_envelope(np.zeros(50)).values == 0)


def test_amplitude_impulse_plateau():
    x = np.zeros(64)
    x[30] = 1.0
    e = amplitude_envelope(x).values
    assert np.allclose(e[20:41], 1 / 21)
    assert np.all(e[:20] == 0) and np.all(e[41:] == 0)


def test_hilbert_cosine_and_am():
    n = np.arange(2048)
    e = hilbert_envelope(np.cos(2 * np.pi * 0.05 * n)).values
    assert np.allclose(e[100:-100], 1.0, atol=0.05)
    m = 1 + 0.5 * np.cos(2 * np.pi * n / 512)
    e = hilbert_envelope(m * np.cos(2 * np.pi * 0.1 * n)).values
    assert np.all(np.abs(e[100:-100] / m[100:-100] - 1) < 0.05)


@given(frames)
def test_hilbert_dominates_magnitude(x):
    assert np.all(hilbert_envelope(x).values >= np.abs(x) - 1e-12)


def test_triangular_paper_points():
    e = triangular_envelope(np.zeros(100)).values
    assert e[35] == 0 and e[65] == 0 and e[50] == 1
    assert e.max() == 1
    d = np.arange(0, 16)
    assert np.allclose(e[50 - d], e[50 + d])
    with pytest.raises(ValueError):
        triangular_envelope(np.zeros(3))


def test_true_envelope_impulse_converges_fast():
    x = np.zeros(128)
    x[40] = 1.0
    assert true_envelope(x).iterations <= 2


def test_true_envelope_zero_frame():
    e = true_envelope(np.zeros(64))
    assert np.all(e.values == e.values[0])


def test_upper_bound_on_random_frames():
    rng = np.random.default_rng(9)
    for _ in range(100):
        x = rng.standard_normal(256)
        mag = np.abs(np.fft.fft(x))
        S = np.log(np.maximum(mag, mag.max() * 1e-5))
        C, it = cepstral_upper_envelope(S, 64)
        assert it <= 50
        assert np.all(DB * (C - S) >= -0.1)


@settings(max_examples=40, deadline=None)
@given(frames)
def test_all_envelopes_valid(x):
    for kind in EnvelopeKind:
        e = estimate(x, kind)
        assert len(e) == x.size
        assert np.all(e.values >= 0) and np.all(np.isfinite(e.values))


@settings(max_examples=40)
@given(frames, st.floats(0.01, 100))
def test_scale_covariance(x, a):
    for f in (amplitude_envelope, hilbert_envelope):
        assert np.allclose(f(a * x).values, a * f(x).values, rtol=1e-9, atol=1e-12)


def test_modulated_noise_recovers_shape():
    rng = np.random.default_rng(10)
    n = 4000
    target = TemporalEnvelope(0.2 + np.sin(np.pi * np.arange(n) / n) ** 2, EnvelopeKind.AMPLITUDE)
    y = modulate(rng.standard_normal(n), target)
    got = amplitude_envelope(y, N=100).values
    assert np.corrcoef(got[200:-200], target.values[200:-200])[0, 1] > 0.9


@pytest.mark.parametrize("kind", ["amplitude", "hilbert", "triangular", "true"])
def test_modulation_keeps_energy(kind):
    rng = np.random.default_rng(11)
    proto = rng.standard_normal(320) * np.hanning(320)
    noise = rng.standard_normal(320 * 50)
    env = estimate(proto, kind)
    y = np.concatenate([modulate(noise[i:i + 320], env) for i in range(0, noise.size, 320)])
    assert abs(10 * np.log10(np.mean(y ** 2) / np.mean(noise ** 2))) < 1


def test_rms_normalized_degenerate():
    assert np.all(rms_normalized(TemporalEnvelope(np.zeros(5), "hilbert")) == 1)


def test_negative_values_rejected():
    with pytest.raises(ValueError):
        TemporalEnvelope(np.array([-1.0, 1.0]), "hilbert")
