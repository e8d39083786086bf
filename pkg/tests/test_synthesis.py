import logging

import numpy as np
import pytest
from scipy.signal import hilbert, resample_poly

from cvoc.envelopes import EnvelopeKind
from cvoc.excitation import ResidualBasis
from cvoc.signal_core import FrameGrid, ParamTrack, TrackKind, Waveform
from cvoc.spectral import MgcTrack
from cvoc.synthesis import (AnalysisBundle, advance_gamma, csm_frame_params, csm_params, harmonic_count,
                            highpass_at, lowpass_at, source_filter_excitation, split_gain, synth_csm,
                            synth_pulse_noise, synth_source_filter)

FS = 16000


def make_bundle(f0=150.0, mvf=FS / 2, c0=0.0, frames=200, order=24, hnr=None, envelope="none",
                basis=None):
    g = FrameGrid(0.005, 0.025, frames)
    f = np.broadcast_to(np.asarray(f0, float), (frames,))
    m = np.broadcast_to(np.asarray(mvf, float), (frames,))
    c = np.zeros((frames, order + 1))
    c[:, 0] = c0
    h = None if hnr is None else ParamTrack(np.full(frames, hnr), g, TrackKind.HNR)
    return AnalysisBundle(ParamTrack(f, g, TrackKind.CONTF0), ParamTrack(m, g, TrackKind.MVF),
                          MgcTrack(c, order, 0.42, g), h, None, basis, EnvelopeKind(envelope), FS)


def salience(x, f0, up=4):
    """Normalised autocorrelation at the pitch lag, measured on an upsampled copy."""
    y = resample_poly(x, up, 1)
    lag = int(round(up * FS / f0))
    y = y[y.size // 10:-y.size // 10]
    a, b = y[:-lag], y[lag:]
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def band_energy(x, lo, hi):
    X = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    f = np.fft.rfftfreq(x.size, 1 / FS)
    return X[(f >= lo) & (f < hi)].sum()


# ---------------------------------------------------------------- source-filter

def test_periodic_output_when_noise_free():
    b = make_bundle(hnr=1e8)
    with pytest.warns(RuntimeWarning):
        y = synth_source_filter(b, seed=0)
    assert salience(y.samples, 150.0) > 0.9


def test_noise_only_output_when_hnr_vanishes():
    b = make_bundle(hnr=1e-8)
    with pytest.warns(RuntimeWarning):
        y = synth_source_filter(b, seed=0)
    assert abs(salience(y.samples, 150.0)) < 0.2


def test_voiced_band_limited_at_mvf():
    b = make_bundle(mvf=1000.0, hnr=1e8)
    with pytest.warns(RuntimeWarning):
        v, _ = source_filter_excitation(b, seed=0)
    low = band_energy(v, 0, 1000)
    high = band_energy(v, 1500, FS / 2)
    assert 10 * np.log10(low / high) > 20


def test_missing_basis_warns_and_uses_pulses():
    b = make_bundle()
    with pytest.warns(RuntimeWarning, match="basis"):
        synth_source_filter(b, seed=0)


def test_source_filter_with_basis():
    L = 64
    v = np.hanning(L)
    basis = ResidualBasis(v[None] / np.linalg.norm(v), np.array([1.0]), 10)
    y = synth_source_filter(make_bundle(hnr=1e8, basis=basis), seed=0)
    assert y.samples.size == 200 * 80
    assert salience(y.samples, 150.0) > 0.9


@pytest.mark.parametrize("frames", [1, 37, 200])
def test_duration_preserved(frames):
    b = make_bundle(frames=frames)
    with pytest.warns(RuntimeWarning):
        y1 = synth_source_filter(b)
    y2 = synth_csm(b)
    assert len(y1) == frames * 80
    assert len(y2) == frames * 80


def test_anchor_is_deterministic_and_plain():
    b = make_bundle(mvf=3000.0, hnr=2.0, envelope="hilbert")
    a1 = synth_pulse_noise(b, seed=3).samples
    a2 = synth_pulse_noise(b, seed=3).samples
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, synth_pulse_noise(b, seed=4).samples)


# ---------------------------------------------------------------- band split

def test_split_pair_is_complementary():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8000)
    s = lowpass_at(x, 2000.0) + highpass_at(x, 2000.0)
    X = np.abs(np.fft.rfft(x[800:-800]))
    S = np.abs(np.fft.rfft(s[800:-800]))
    assert np.max(np.abs(20 * np.log10(S / X))) < 0.1


def test_split_gain_sums_to_one():
    f = np.linspace(0, 8000, 1001)
    g = split_gain(f, 3000.0, FS)
    assert np.all(g + (1 - g) == 1.0)
    assert g[0] == 1.0 and g[-1] == 0.0
    assert np.all(np.diff(g) <= 0)


def test_tone_above_cutoff_rejected():
    t = np.arange(16000) / FS
    x = np.sin(2 * np.pi * 3000.0 * t)
    y = lowpass_at(x, 1500.0)
    att = 10 * np.log10(np.mean(x[2000:-2000] ** 2) / np.mean(y[2000:-2000] ** 2))
    assert att > 40


def test_nyquist_cutoff_is_identity():
    x = np.random.default_rng(1).standard_normal(4000)
    np.testing.assert_allclose(lowpass_at(x, FS / 2), x, atol=1e-12)
    np.testing.assert_allclose(highpass_at(x, FS / 2), 0.0, atol=1e-12)


def test_split_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        lowpass_at(np.ones(100), 0.0)


# ---------------------------------------------------------------- CSM parameters

def test_harmonic_count_example():
    assert harmonic_count(200.0, 4000.0) == 19


def test_harmonic_count_unvoiced():
    assert harmonic_count(200.0, 250.0) == 0
    assert harmonic_count(200.0, 300.0) == 0


def test_harmonic_count_clamped_to_one():
    # voiced but MVF below two harmonics
    assert harmonic_count(200.0, 310.0) == 1


@pytest.mark.parametrize("bad", [(0.0, 100.0), (100.0, -1.0)])
def test_harmonic_count_rejects(bad):
    with pytest.raises(ValueError):
        harmonic_count(*bad)


def test_gamma_constant_increment():
    w0 = 2 * np.pi * 200 / FS
    g = 0.0
    for i in range(200):
        g = advance_gamma(g, w0, w0, 80)
        assert g == pytest.approx((i + 1) * 80 * w0, rel=1e-12)


def test_gamma_trapezoid():
    assert advance_gamma(1.0, 0.2, 0.1, 10) == pytest.approx(1.0 + 5 * 0.3)


def test_frame_params_invariants():
    c = np.zeros(25)
    p = csm_frame_params(200.0, 4000.0, c, 0.0)
    assert p.K == 19
    assert p.K * 200.0 <= 4000.0
    assert np.all(p.A >= 0)
    # flat envelope: amplitude 2 sqrt(f0/fs) below the transition band
    assert p.A[0] == pytest.approx(2 * np.sqrt(200 / FS))
    np.testing.assert_allclose(p.phi, np.arange(1, 20) * p.gamma, atol=1e-12)


def test_frame_params_never_reach_nyquist():
    p = csm_frame_params(3000.0, 7999.0, np.zeros(25), 0.0)
    assert np.all(np.arange(1, p.K + 1) * 3000.0 < FS / 2)


def test_csm_params_gamma_no_drift():
    b = make_bundle(f0=200.0, mvf=4000.0)
    ps = csm_params(b)
    w0 = 2 * np.pi * 200 / FS
    expect = 200 * 80 * w0
    assert abs(ps[-1].gamma - expect) / expect < 1e-9


# ---------------------------------------------------------------- CSM synthesis

def test_csm_harmonic_structure():
    b = make_bundle(f0=200.0, mvf=4000.0)
    y, sv, sn = synth_csm(b, seed=0, return_parts=True)
    X = np.abs(np.fft.rfft(sv * np.hanning(sv.size)))
    f = np.fft.rfftfreq(sv.size, 1 / FS)
    peak = X.max()
    strong = [k for k in range(1, 40) if X[np.argmin(np.abs(f - 200 * k))] > 0.1 * peak]
    assert strong == list(range(1, 20))
    # above MVF the voiced part is negligible next to the noise
    assert band_energy(sn, 4200, FS / 2) > 100 * band_energy(sv, 4200, FS / 2)


def test_csm_silent_for_zero_envelope():
    b = make_bundle(f0=200.0, mvf=4000.0, c0=-40.0)
    y = synth_csm(b, seed=0)
    assert np.max(np.abs(y.samples)) < 1e-3


def test_csm_unvoiced_everywhere_is_noise_only():
    b = make_bundle(f0=200.0, mvf=250.0)
    y, sv, sn = synth_csm(b, seed=0, return_parts=True)
    assert not np.any(sv)
    np.testing.assert_array_equal(y.samples, sn)


def test_csm_deterministic():
    b = make_bundle(f0=180.0, mvf=3000.0)
    np.testing.assert_array_equal(synth_csm(b, seed=5).samples, synth_csm(b, seed=5).samples)


def test_csm_phase_continuity():
    # glide: instantaneous frequency of harmonic 1 stays within 2 % of contF0
    frames = 200
    f0 = np.linspace(150, 180, frames)
    b = make_bundle(f0=f0, mvf=303.0)
    y, sv, _ = synth_csm(b, seed=0, return_parts=True)
    z = hilbert(sv)
    inst = np.diff(np.unwrap(np.angle(z))) * FS / (2 * np.pi)
    ref = np.repeat(f0, 80)[1:]
    mid = slice(1000, sv.size - 1000)
    rel = np.abs(inst[mid] - ref[mid]) / ref[mid]
    assert np.median(rel) < 0.02


def test_csm_logs_harmonic_count(caplog):
    b = make_bundle(f0=200.0, mvf=4000.0, frames=5)
    with caplog.at_level(logging.DEBUG, logger="cvoc.synthesis"):
        synth_csm(b)
    lines = [r.getMessage() for r in caplog.records if "K=" in r.getMessage()]
    assert lines == [f"frame {i} K=19" for i in range(5)]


def test_bundle_rejects_mismatched_tracks():
    b = make_bundle(frames=10)
    g = FrameGrid(0.005, 0.025, 9)
    with pytest.raises(ValueError):
        AnalysisBundle(b.contf0, ParamTrack(np.full(9, 4000.0), g, TrackKind.MVF), b.mgc)


def test_bundle_from_analysis(vowel_bundle, vowel):
    y = synth_csm(vowel_bundle, seed=0)
    assert abs(len(y) - len(vowel)) <= vowel_bundle.hop
    assert isinstance(y, Waveform)
