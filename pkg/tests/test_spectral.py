import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvoc import testsignals as ts
from cvoc.signal_core import FrameGrid, Waveform
from cvoc.spectral import (LOG_FLOOR_ABS, MgcTrack, inverse_filter, mgc_analyze, mgc_to_complex,
                           mgc_to_spectrum, mglsa_filter, spectral_flatness, spectrum_to_mgc, warp)

FS = 16000
DB = 20 / np.log(10)


def _flat(n_frames, order=24, c0=0.0, alpha=0.42):
    c = np.zeros((n_frames, order + 1))
    c[:, 0] = c0
    return MgcTrack(c, order, alpha, FrameGrid(0.005, 0.025, n_frames))


@pytest.fixture(scope="module")
def formant_mgc():
    x = ts.resonator(ts.pulse_train(120.0, 1.0).samples, 1000.0, 80.0)
    w = Waveform(0.5 * x / np.max(np.abs(x)), FS)
    return mgc_analyze(w, f0=np.full(200, 120.0))


def test_validation():
    w = Waveform(np.zeros(800), FS)
    with pytest.raises(ValueError):
        mgc_analyze(w, order=5)
    with pytest.raises(ValueError):
        mgc_analyze(w, alpha=1.0)
    with pytest.raises(ValueError):
        MgcTrack(np.zeros((3, 5)), 3, 0.42, FrameGrid(0.005, 0.025, 3))


def test_zero_frames_floor():
    m = mgc_analyze(Waveform(np.zeros(1600), FS))
    assert np.all(np.isfinite(m.coeffs))
    assert np.allclose(m.coeffs[:, 0], LOG_FLOOR_ABS)
    assert np.allclose(m.coeffs[:, 1:], 0.0)


def test_white_noise_is_flat():
    w = Waveform(0.3 * np.random.default_rng(0).standard_normal(FS), FS)
    c = mgc_analyze(w).coeffs.mean(axis=0)
    assert np.mean(np.abs(c[1:])) < 0.1 * abs(c[0])


def test_alpha_zero_is_identity_warp():
    om = np.linspace(0, np.pi, 257)
    assert np.allclose(warp(om, 0.0), om)
    assert warp(np.pi / 2, 0.0) == pytest.approx(np.pi / 2, abs=1e-15)


@pytest.mark.parametrize("alpha", [0.0, 0.2, 0.42, 0.58, 0.59])
def test_warp_monotone(alpha):
    b = warp(np.linspace(0, np.pi, 4001), alpha)
    assert np.all(np.diff(b) > 0)
    assert b[0] == 0 and b[-1] == pytest.approx(np.pi)


def test_single_formant_peak(formant_mgc):
    fr = np.arange(0, 8000, 2.0)
    peaks = [fr[np.argmax(mgc_to_spectrum(r, fr, 0.42))] for r in formant_mgc.coeffs[10:-10]]
    assert np.all(np.abs(np.array(peaks) - 1000) <= 50)


def test_c0_only_constant():
    c = np.zeros(25)
    c[0] = -1.3
    assert np.allclose(mgc_to_spectrum(c, np.linspace(0, 8000, 50), 0.42), -1.3)


@pytest.mark.parametrize("alpha", [0.0, 0.42])
def test_harmonic_evaluation_matches_dense_grid(alpha):
    # oracle: FFT of the symmetric cepstrum on a fine uniform warped grid
    rng = np.random.default_rng(3)
    c = rng.normal(0, 1, 25) / (1 + np.arange(25)) ** 1.5
    M = 1 << 16
    cep = np.zeros(M)
    cep[:25] = c
    cep[-24:] = c[:0:-1]
    dense = np.fft.rfft(cep).real
    grid_b = np.linspace(0, np.pi, dense.size)
    f = 137.0 * np.arange(1, 58)
    beta = warp(2 * np.pi * f / FS, alpha)
    oracle = np.interp(beta, grid_b, dense)
    assert np.max(np.abs(DB * (mgc_to_spectrum(c, f, alpha) - oracle))) < 0.1


def test_complex_real_part_matches():
    c = np.random.default_rng(4).normal(0, 0.3, 25)
    f = np.linspace(0, 8000, 100)
    assert np.allclose(mgc_to_complex(c, f, 0.42).real, mgc_to_spectrum(c, f, 0.42))


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 24), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_cepstrum_round_trip(order, alpha, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(0, 1, order + 1) / (1 + np.arange(order + 1)) ** 2
    f = np.linspace(0, FS / 2, 2049)
    back = spectrum_to_mgc(mgc_to_spectrum(c, f, alpha), alpha, order)[0]
    assert np.linalg.norm(back - c) / np.linalg.norm(c) < 0.05


def test_envelope_fits_vowel_harmonics():
    f0 = 130.0
    for v in "aiueo":
        w = ts.vowel(f0, 1.0, formants=v)
        m = mgc_analyze(w, f0=np.full(200, f0))
        x = w.samples[4000:12000]
        t = np.arange(x.size) / FS
        k = np.arange(1, int(5000 / f0) + 1)
        win = np.hanning(x.size)
        amp = np.abs(np.exp(-2j * np.pi * np.outer(k * f0, t)) @ (x * win)) * 2 / win.sum()
        # exp(C) is the square root of the two-sided PSD: a_k = 2 sqrt(f0 / fs) exp(C)
        C = np.log(amp / (2 * np.sqrt(f0 / FS)))
        d = DB * (mgc_to_spectrum(m.coeffs[100], k * f0, 0.42) - C)
        assert np.sqrt(np.mean(d ** 2)) < 3


def test_flat_filter_is_identity():
    x = np.random.default_rng(5).standard_normal(4000)
    m = _flat(50)
    y = mglsa_filter(Waveform(0.1 * x, FS), m, normalize=False)
    assert np.allclose(y.samples, 0.1 * x, atol=1e-12)
    assert np.allclose(inverse_filter(Waveform(0.1 * x, FS), m).samples, 0.1 * x, atol=1e-12)


def test_impulse_through_formant(formant_mgc):
    x = np.zeros(len(formant_mgc) * 80)
    x[8000] = 1.0
    y = mglsa_filter(Waveform(x, FS), formant_mgc, normalize=False).samples
    Y = np.abs(np.fft.rfft(y, 1 << 15))
    f = np.fft.rfftfreq(1 << 15, 1 / FS)
    assert abs(f[np.argmax(Y)] - 1000) <= 50


def test_c0_is_log_gain():
    x = 0.1 * np.random.default_rng(6).standard_normal(4000)
    m = _flat(50, c0=0.2)
    y1 = mglsa_filter(Waveform(x, FS), m, normalize=False).samples
    m2 = m.replace(m.coeffs + np.eye(1, 25)[0] * np.log(2))
    y2 = mglsa_filter(Waveform(x, FS), m2, normalize=False).samples
    assert np.std(y2) / np.std(y1) == pytest.approx(2.0, rel=0.05)


def test_soft_normalisation():
    x = np.random.default_rng(7).standard_normal(4000)
    y = mglsa_filter(Waveform(x, FS), _flat(50, c0=3.0))
    assert np.max(np.abs(y.samples)) <= 1.0 + 1e-12
    assert np.all(np.isfinite(y.samples))


def test_inverse_round_trip_and_whitening():
    v = ts.vowel(130.0, 1.0, formants="a")
    m = mgc_analyze(v, f0=np.full(200, 130.0))
    r = inverse_filter(v, m)
    y = mglsa_filter(r, m, normalize=False).samples
    # segmental SNR over 20 ms frames
    seg = 320
    n = (v.samples.size // seg) * seg
    s = v.samples[:n].reshape(-1, seg)
    e = (v.samples[:n] - y[:n]).reshape(-1, seg)
    snr = 10 * np.log10(np.sum(s ** 2, axis=1) / np.maximum(np.sum(e ** 2, axis=1), 1e-20))
    assert np.mean(snr[2:-2]) > 20
    assert spectral_flatness(r) > spectral_flatness(v)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_filter_bounded(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(0, 1, (20, 25)) / (1 + np.arange(25)) ** 1.5
    m = MgcTrack(c, 24, 0.42, FrameGrid(0.005, 0.025, 20))
    y = mglsa_filter(Waveform(rng.uniform(-1, 1, 1600), FS), m)
    assert np.all(np.isfinite(y.samples))
