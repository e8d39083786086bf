import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvoc import testsignals as ts
from cvoc.signal_core import Waveform
from cvoc.vc import (WarpPath, align_bundles, apply_path, bundle_features, convert, dtw_align,
                     features_to_bundle, ga_gain, gass_enhance, identity_mapping)

FS = 16000


def all_paths(I, J):
    """Every monotone path from (0, 0) to (I-1, J-1) with unit steps."""
    def rec(i, j):
        if (i, j) == (I - 1, J - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < I and j + dj < J:
                for rest in rec(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(rec(0, 0))


def brute_force(X, Y):
    d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    return min(sum(d[i, j] for i, j in p) for p in all_paths(len(X), len(Y)))


def snr_db(clean, est):
    return 10 * np.log10(np.sum(clean ** 2) / np.sum((clean - est) ** 2))


# ---------------------------------------------------------------- DTW

def test_worked_example():
    a, b = [0.0, 1.0], [3.0, -2.0]
    X = np.array([a, b])
    Y = np.array([a, a, b])
    path, dist = dtw_align(X, Y)
    assert path.pairs.tolist() == [[0, 0], [0, 1], [1, 2]]
    assert dist == 0.0
    assert dist == brute_force(X, Y)


def test_identity_alignment():
    X = np.random.default_rng(0).standard_normal((30, 4))
    path, dist = dtw_align(X, X)
    assert dist == 0.0
    assert len(path) == 30
    assert path.pairs.tolist() == [[i, i] for i in range(30)]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_matches_exhaustive_search(I, J, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((I, 2)), rng.standard_normal((J, 2))
    path, dist = dtw_align(X, Y)
    assert dist == pytest.approx(brute_force(X, Y), abs=1e-9)
    d = np.linalg.norm(X[path.pairs[:, 0]] - Y[path.pairs[:, 1]], axis=1)
    assert d.sum() == pytest.approx(dist, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 31))
def test_path_invariants(I, J, seed):
    rng = np.random.default_rng(seed)
    path, _ = dtw_align(rng.standard_normal((I, 3)), rng.standard_normal((J, 3)))
    p = path.pairs
    assert max(I, J) <= len(path) < I + J
    assert p[0].tolist() == [0, 0] and p[-1].tolist() == [I - 1, J - 1]
    steps = np.diff(p, axis=0)
    assert np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 31))
def test_symmetric_under_swap(I, J, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((I, 2)), rng.standard_normal((J, 2))
    p1, d1 = dtw_align(X, Y)
    p2, d2 = dtw_align(Y, X)
    assert d1 == pytest.approx(d2, abs=1e-9)
    # the transposed path is a valid path of the swapped problem with the same cost
    t = p1.transposed()
    d = np.linalg.norm(Y[t.pairs[:, 0]] - X[t.pairs[:, 1]], axis=1).sum()
    assert d == pytest.approx(d2, abs=1e-9)


def test_one_dimensional_inputs():
    path, dist = dtw_align([1.0, 2.0, 3.0], [1.0, 3.0])
    assert dist == pytest.approx(1.0)
    assert path.shape == (3, 2)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        dtw_align(np.zeros((3, 2)), np.zeros((3, 3)))


def test_empty_input():
    with pytest.raises(ValueError):
        dtw_align(np.zeros((0, 2)), np.zeros((3, 2)))


def test_warp_path_validation():
    with pytest.raises(ValueError):
        WarpPath(np.array([[1, 0], [1, 1]]))
    with pytest.raises(ValueError):
        WarpPath(np.array([[0, 0], [1, 2], [0, 3]]))


def test_path_text_and_apply():
    p = WarpPath(np.array([[0, 0], [0, 1], [1, 2]]))
    assert p.to_text() == "0 0\n0 1\n1 2\n"
    x, y = apply_path(np.array([10, 20]), np.array([1, 2, 3]), p)
    assert x.tolist() == [10, 10, 20] and y.tolist() == [1, 2, 3]


# ---------------------------------------------------------------- GA-SS gain

def test_gain_nonnegative_random():
    rng = np.random.default_rng(0)
    gamma = 10 ** rng.uniform(-3, 3, (10000, 64))
    xi = 10 ** rng.uniform(-3, 3, (10000, 64))
    for clamp in (True, False):
        h = ga_gain(gamma, xi, clamp)
        assert np.all(np.isfinite(h)) and np.all(h >= 0)
    assert np.all(ga_gain(gamma, xi) <= 1)


def test_gain_consistent_triangle():
    # a feasible triangle: clean 1, noise 1 at a right angle -> |Y|^2 = 2
    # gamma = 2, xi = 1 gives cos terms from the triangle; the gain is |X| / |Y|
    h = ga_gain(2.0, 1.0, clamp=False)
    assert h == pytest.approx(np.sqrt(1 / 2))


def test_gain_high_snr_is_unity():
    assert ga_gain(1e6, 1e6 - 1) == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- GA-SS enhancement

def test_tone_in_noise_improves():
    n = FS
    t = np.arange(n) / FS
    clean = np.sin(2 * np.pi * 500 * t)
    clean[:1600] = 0.0                                 # leading noise-only frames
    rng = np.random.default_rng(1)
    noise = rng.standard_normal(n)
    noise *= np.sqrt(np.sum(clean ** 2) / np.sum(noise ** 2))
    noisy = clean + noise
    out = gass_enhance(Waveform(noisy, FS)).samples
    assert snr_db(clean, out) - snr_db(clean, noisy) >= 3.0


def test_clean_input_identity():
    x = ts.vowel(130, 0.5, formants="e", seed=2).samples.copy()
    x[:800] = 0.0                                      # silent lead: zero noise estimate
    out = gass_enhance(Waveform(x, FS)).samples
    assert np.max(np.abs(out - x)) <= 1e-3 * np.max(np.abs(x))


def test_energy_nonincreasing_with_clamp():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.standard_normal(8000) * rng.uniform(0.1, 2)
        out = gass_enhance(Waveform(x, FS)).samples
        assert np.sum(out ** 2) <= np.sum(x ** 2) * (1 + 1e-9)


def test_output_length_and_short_input():
    x = np.random.default_rng(4).standard_normal(5000)
    assert len(gass_enhance(Waveform(x, FS))) == 5000
    with pytest.raises(ValueError):
        gass_enhance(Waveform(np.ones(100), FS), noise_frames=50)


# ---------------------------------------------------------------- pipeline

def test_feature_round_trip(vowel_bundle):
    f = bundle_features(vowel_bundle)
    assert f.shape == (len(vowel_bundle.contf0), vowel_bundle.mgc.order + 3)
    b = features_to_bundle(vowel_bundle, identity_mapping(f))
    np.testing.assert_allclose(b.contf0.values, vowel_bundle.contf0.values, rtol=1e-12)
    np.testing.assert_allclose(b.mvf.values, vowel_bundle.mvf.values, rtol=1e-12)
    np.testing.assert_array_equal(b.mgc.coeffs, vowel_bundle.mgc.coeffs)
    with pytest.raises(ValueError):
        features_to_bundle(vowel_bundle, f[:, :-1])


def test_align_bundle_with_itself(vowel_bundle):
    path, dist = align_bundles(vowel_bundle, vowel_bundle)
    assert dist == 0.0
    assert len(path) == len(vowel_bundle.contf0)


def test_convert_identity_mapping(vowel_bundle):
    from cvoc.synthesis import synth_csm
    y = convert(vowel_bundle, enhance=False, seed=0)
    np.testing.assert_allclose(y.samples, synth_csm(vowel_bundle, seed=0).samples, atol=1e-9)
    assert len(convert(vowel_bundle, seed=0)) == len(y)
