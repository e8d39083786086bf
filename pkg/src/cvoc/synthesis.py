"""Waveform generation: pulse/PCA source-filter resynthesis and the continuous sinusoidal model.

Both synthesizers read an :class:`AnalysisBundle` whose tracks share one frame
grid, produce ``num_frames * hop`` samples and use a seeded white Gaussian
noise generator, so the output is a deterministic function of the bundle and
the seed.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import envelopes
from .envelopes import EnvelopeKind
from .excitation import (ResidualBasis, detect_gci, extract_ps_frames, hnr_estimate, hnr_weights,
                         pca_basis)
from .mvf import estimate_mvf_slm
from .noise_mask import DEFAULT_THRESHOLD, CnmTrack, compute_cnm, compute_pdd
from .pitch import PitchConfig, contf0_baseline, refine_akf, refine_stonemask, refine_timewarp
from .signal_core import FrameGrid, ParamTrack, Waveform, hann, next_pow2, track_at_samples
from .spectral import MgcTrack, inverse_filter, mgc_analyze, mgc_to_complex, mglsa_filter

log = logging.getLogger(__name__)

TRANSITION_HZ = 200.0
VOICED_RATIO = 1.5          # frame is voiced when MVF > VOICED_RATIO * contF0


@dataclass(frozen=True)
class AnalysisBundle:
    contf0: ParamTrack
    mvf: ParamTrack
    mgc: MgcTrack
    hnr: ParamTrack | None = None
    cnm: CnmTrack | None = None
    basis: ResidualBasis | None = None
    envelope_kind: EnvelopeKind = EnvelopeKind.TRUE_ENV
    sample_rate: int = 16000

    def __post_init__(self):
        n = len(self.contf0)
        for name in ("mvf", "hnr", "cnm"):
            t = getattr(self, name)
            if t is not None and len(t.values) != n:
                raise ValueError(f"{name} track length {len(t.values)} != {n}")
        if len(self.mgc) != n:
            raise ValueError("mgc frame count does not match contF0")
        if np.any(self.contf0.values <= 0) or np.any(self.mvf.values <= 0):
            raise ValueError("contF0 and MVF must be strictly positive")
        if abs(self.contf0.grid.frame_shift - self.mvf.grid.frame_shift) > 1e-12 or \
                abs(self.contf0.grid.frame_shift - self.mgc.grid.frame_shift) > 1e-12:
            raise ValueError("tracks must share one frame grid")
        object.__setattr__(self, "envelope_kind", EnvelopeKind(self.envelope_kind))

    @property
    def grid(self) -> FrameGrid:
        return self.contf0.grid

    @property
    def hop(self) -> int:
        return self.grid.hop(self.sample_rate)

    @property
    def num_samples(self) -> int:
        return len(self.contf0) * self.hop


# ---------------------------------------------------------------- analysis

def analyze(w: Waveform, frame_shift: float = 0.005, refine: str = "none", mgc_order: int = 24,
            alpha: float = 0.42, envelope: str = "true", f0_min: float = 80.0, f0_max: float = 300.0,
            with_hnr: bool = True, with_basis: bool = True, with_cnm: bool = False,
            cnm_threshold: float = DEFAULT_THRESHOLD, cnm_polarity: str = "literal") -> AnalysisBundle:
    """Full analysis: contF0 (optionally refined), MVF, MGC, and the optional excitation tracks."""
    cfg = PitchConfig(f0_min=f0_min, f0_max=f0_max, frame_shift=frame_shift)
    f0 = contf0_baseline(w, cfg)
    if refine == "akf":
        f0 = refine_akf(f0, w, cfg)
    elif refine == "timewarp":
        f0 = refine_timewarp(f0, w, cfg)
    elif refine == "stonemask":
        f0 = refine_stonemask(f0, w, cfg)
    elif refine != "none":
        raise ValueError(f"unknown refinement {refine!r}")
    grid = f0.grid
    mvf = estimate_mvf_slm(w, f0)
    mgc = mgc_analyze(w, grid, mgc_order, alpha, f0=f0)
    hnr = hnr_estimate(w, grid, f0_min, f0_max) if with_hnr else None
    basis = None
    if with_basis:
        residual = inverse_filter(w, mgc)
        gcis = detect_gci(residual, f0)
        if gcis.size:
            frames = extract_ps_frames(residual, gcis, f0)
            if frames.frames.shape[0] >= 2:
                basis = pca_basis(frames, center=False)
    cnm = None
    if with_cnm:
        cnm = compute_cnm(compute_pdd(w, f0), mvf, threshold=cnm_threshold, polarity=cnm_polarity)
    return AnalysisBundle(f0, mvf, mgc, hnr, cnm, basis, EnvelopeKind(envelope), w.sample_rate)


# ---------------------------------------------------------------- band split

def split_gain(freqs, cutoff: float, fs: int, width: float = TRANSITION_HZ) -> np.ndarray:
    """Low-pass gain with a raised-cosine transition of ``width`` Hz centred on ``cutoff``.

    ``1 - split_gain`` is the matching high-pass, so the pair sums to one.
    A cutoff at or above Nyquist passes everything.
    """
    freqs = np.asarray(freqs, float)
    if cutoff >= fs / 2:
        return np.ones_like(freqs)
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    g = np.clip((freqs - (cutoff - width / 2)) / width, 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * g))


def _framewise_split(x, cutoffs, fs: int, hop: int, high: bool) -> np.ndarray:
    """Zero-phase frame-wise filtering; periodic Hann frames of two hops, one per hop."""
    x = np.asarray(getattr(x, "samples", x), float)
    n = x.size
    cutoffs = np.atleast_1d(np.asarray(cutoffs, float))
    if np.any(cutoffs <= 0):
        raise ValueError("cutoff must be positive")
    L = 2 * hop
    win = hann(L, periodic=True)
    nfft = next_pow2(L + 1024 * max(fs // 16000, 1))
    pad = (nfft - L) // 2
    freqs = np.fft.rfftfreq(nfft, 1 / fs)
    n_frames = n // hop + 2
    xp = np.concatenate([np.zeros(hop + pad), x, np.zeros(L + pad + nfft)])
    out = np.zeros(xp.size)
    gains = {}
    for m in range(n_frames):
        s = m * hop                                  # frame m covers x[m*hop - hop : m*hop + hop]
        seg = xp[s + pad:s + pad + L]
        if not np.any(seg):
            continue
        c = float(cutoffs[min(m, cutoffs.size - 1)])
        g = gains.get(c)
        if g is None:
            g = split_gain(freqs, c, fs)
            if high:
                g = 1.0 - g
            gains[c] = g
        buf = np.zeros(nfft)
        buf[pad:pad + L] = seg * win
        out[s:s + nfft] += np.fft.irfft(np.fft.rfft(buf) * g, nfft)
    return out[hop + pad:hop + pad + n]


def lowpass_at(x, cutoff, fs: int = 16000, hop: int = 80) -> np.ndarray:
    """Frame-wise low-pass; ``cutoff`` is a scalar or one value per ``hop``-spaced frame."""
    return _framewise_split(x, cutoff, fs, hop, high=False)


def highpass_at(x, cutoff, fs: int = 16000, hop: int = 80) -> np.ndarray:
    return _framewise_split(x, cutoff, fs, hop, high=True)


# ---------------------------------------------------------------- shared excitation pieces

def pulse_instants(f0_samples: np.ndarray, fs: int) -> np.ndarray:
    """Fractional sample times where the running phase ``sum f0 / fs`` crosses an integer.

    The phase starts at zero on sample 0, so the first pulse is at 0.
    """
    ph = np.concatenate([[0.0], np.cumsum(f0_samples / fs)])
    k = np.floor(ph)
    idx = np.flatnonzero(np.diff(k) > 0)          # crossing between idx and idx + 1
    frac = (k[idx + 1] - ph[idx]) / (ph[idx + 1] - ph[idx])
    return np.concatenate([[0.0], idx + frac])


def pulse_positions(f0_samples: np.ndarray, fs: int) -> np.ndarray:
    """Integer sample positions of :func:`pulse_instants` (within the signal)."""
    t = np.round(pulse_instants(f0_samples, fs)).astype(int)
    return np.unique(t[t < f0_samples.size])


def _pulse_shape(proto: np.ndarray | None, L: int, frac: float = 0.0) -> np.ndarray:
    """Unit-energy pulse of ``L`` samples centred at ``L // 2 + frac``.

    The prototype is stretched to ``L`` samples; without one a Hann-tapered
    sinc gives a band-limited impulse at the fractional position.
    """
    j = np.arange(L) - L // 2 - frac
    if proto is None:
        p = np.sinc(j) * np.where(np.abs(j) < 8, 0.5 * (1 + np.cos(np.pi * j / 8)), 0.0)
    else:
        pos = (j + L // 2) * proto.size / L
        p = np.interp(pos, np.arange(proto.size), proto, left=0.0, right=0.0)
    nrm = np.linalg.norm(p)
    return p / nrm if nrm > 0 else p


def _noise_envelope(n: int, pulses, f0_samples, fs, kind: EnvelopeKind, proto, voiced_mask):
    """Per-sample unit-RMS temporal envelope laid out pitch-synchronously.

    The envelope of the (two-period) excitation prototype is taken once and
    stretched to each local pitch period; unvoiced samples get a flat envelope.
    Data-driven envelopes need a prototype, so without one only the triangular
    shape (which needs no data) is applied.
    """
    env = np.ones(n)
    if kind is EnvelopeKind.NONE or (proto is None and kind is not EnvelopeKind.TRIANGULAR):
        return env
    ref = proto if proto is not None else np.zeros(64)
    tmpl = envelopes.rms_normalized(envelopes.estimate(ref, kind))
    if not np.all(np.isfinite(tmpl)) or not np.any(tmpl > 0):
        return env
    for p in pulses:
        P = int(round(fs / f0_samples[p]))
        L = 2 * P
        start = p - L // 2
        seg = np.interp(np.arange(L) * tmpl.size / L, np.arange(tmpl.size), tmpl)
        # keep the central period of the two-period template around the pulse
        a, b = max(start + L // 4, 0), min(start + L // 4 + P, n)
        if b > a:
            env[a:b] = seg[a - start:b - start]
    env = np.where(voiced_mask, env, 1.0)
    r = np.sqrt(np.mean(env ** 2))
    return env / r if r > 0 else np.ones(n)


def _frame_per_sample(track_values, hop, n):
    idx = np.clip(np.arange(n) // hop, 0, len(track_values) - 1)
    return np.asarray(track_values, float)[idx]


# ---------------------------------------------------------------- source-filter

def source_filter_excitation(b: AnalysisBundle, seed: int | None = 0, use_cnm: bool = True):
    """Voiced and unvoiced excitation (before envelope filtering), each ``num_samples`` long."""
    fs = b.sample_rate
    hop = b.hop
    n = b.num_samples
    rng = np.random.default_rng(seed)
    f0_s = track_at_samples(b.contf0.values, b.grid.frame_shift, fs, n)
    if b.basis is None:
        warnings.warn("no residual basis in bundle; using impulse excitation", RuntimeWarning)
        proto = None
    else:
        proto = b.basis.first
    inst = pulse_instants(f0_s, fs)
    inst = inst[inst < n]
    pos = np.minimum(np.round(inst).astype(int), n - 1)
    if b.hnr is not None:
        wts = hnr_weights(b.hnr, fs)
        gv = wts.voiced_at(pos)
        gu = wts.unvoiced_per_sample(n)
    else:
        gv = np.ones(inst.size)
        gu = np.zeros(n)
    off = int(np.ceil(2 * fs / f0_s.min())) + 1
    v = np.zeros(n + 2 * off)
    for t, g in zip(inst, gv):
        i = int(np.floor(t))
        P = fs / f0_s[min(i, n - 1)]
        L = int(round(2 * P))
        s = off + i - L // 2
        v[s:s + L] += _pulse_shape(proto, L, t - i) * np.sqrt(P) * g
    v = lowpass_at(v[off:off + n], b.mvf.values, fs, hop)
    voiced_mask = _frame_per_sample(b.mvf.values, hop, n) > VOICED_RATIO * _frame_per_sample(
        b.contf0.values, hop, n)
    env = _noise_envelope(n, pos, f0_s, fs, b.envelope_kind, proto, voiced_mask)
    # noise above MVF always; below MVF it shares the band with the pulses in HNR proportion
    noise = rng.standard_normal(n)
    u = (highpass_at(noise, b.mvf.values, fs, hop) + gu * lowpass_at(noise, b.mvf.values, fs, hop)) * env
    if use_cnm and b.cnm is not None:
        c = _frame_per_sample(b.cnm.values, hop, n)
        thr = b.cnm.threshold
        v = np.where(c <= thr, v, 0.0)
        u = u * c
    return v, u


def synth_source_filter(b: AnalysisBundle, seed: int | None = 0, use_cnm: bool = True) -> Waveform:
    """PCA-residual (or impulse) pulses below MVF plus shaped noise above, through the envelope filter."""
    v, u = source_filter_excitation(b, seed, use_cnm)
    y = mglsa_filter(Waveform(v + u, b.sample_rate), b.mgc, normalize=False)
    return y


def synth_pulse_noise(b: AnalysisBundle, seed: int | None = 0) -> Waveform:
    """Simple pulse-noise anchor: impulses below MVF, plain white noise above, no HNR, envelope or mask."""
    plain = dataclasses.replace(b, hnr=None, cnm=None, basis=None, envelope_kind=EnvelopeKind.NONE)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return synth_source_filter(plain, seed)


# ---------------------------------------------------------------- continuous sinusoidal model

@dataclass(frozen=True)
class CsmFrameParams:
    K: int
    A: np.ndarray
    phi: np.ndarray
    gamma: float
    w0: float

    def __post_init__(self):
        if self.K < 0 or self.A.size != self.K or self.phi.size != self.K:
            raise ValueError("inconsistent harmonic count")
        if np.any(self.A < 0):
            raise ValueError("amplitudes must be non-negative")


def harmonic_count(contf0: float, mvf: float, voiced_ratio: float = VOICED_RATIO) -> int:
    if contf0 <= 0 or mvf <= 0:
        raise ValueError("contF0 and MVF must be positive")
    if mvf <= voiced_ratio * contf0:
        return 0
    return max(int(np.round(mvf / contf0)) - 1, 1)


def advance_gamma(prev_gamma: float, w0: float, prev_w0: float, T: float) -> float:
    """Trapezoidal update of the running phase term (``T`` in samples, ``w0`` in rad/sample)."""
    return prev_gamma + 0.5 * T * (w0 + prev_w0)


def csm_frame_params(contf0: float, mvf: float, mgc_frame, prev_gamma: float, prev_w0: float | None = None,
                     T: float = 80.0, alpha: float = 0.42, fs: int = 16000,
                     voiced_ratio: float = VOICED_RATIO) -> CsmFrameParams:
    """Harmonic count, amplitudes and phases for one frame.

    Amplitudes are ``2 sqrt(f0 / fs) * H(k f0) * exp(Re C_k)`` with ``H`` the
    low-pass complement of the noise high-pass, matching the envelope level
    convention of :mod:`cvoc.spectral`; ``C_k`` is the minimum-phase complex
    log spectrum at ``k f0``, whose imaginary part is the phase response.
    """
    K = harmonic_count(contf0, mvf, voiced_ratio)
    w0 = 2 * np.pi * contf0 / fs
    gamma = advance_gamma(prev_gamma, w0, w0 if prev_w0 is None else prev_w0, T)
    # never place a harmonic at or beyond Nyquist
    K = min(K, int(np.ceil(fs / 2 / contf0)) - 1)
    if K == 0:
        return CsmFrameParams(0, np.zeros(0), np.zeros(0), gamma, w0)
    k = np.arange(1, K + 1)
    C = mgc_to_complex(np.asarray(mgc_frame, float), k * contf0, alpha, fs)
    H = split_gain(k * contf0, mvf, fs)
    A = 2 * np.sqrt(contf0 / fs) * H * np.exp(C.real)
    phi = C.imag + k * gamma
    return CsmFrameParams(K, A, phi, gamma, w0)


def csm_params(b: AnalysisBundle) -> list[CsmFrameParams]:
    fs, hop = b.sample_rate, b.hop
    out = []
    gamma, prev_w0 = 0.0, None
    for i, (f, m) in enumerate(zip(b.contf0.values, b.mvf.values)):
        p = csm_frame_params(f, m, b.mgc.coeffs[i], gamma, prev_w0, hop, b.mgc.alpha, fs)
        log.debug("frame %d K=%d", i, p.K)
        out.append(p)
        gamma, prev_w0 = p.gamma, p.w0
    return out


def synth_csm(b: AnalysisBundle, seed: int | None = 0, return_parts: bool = False):
    """Harmonics below MVF (Hann overlap-add) plus envelope-modulated noise above MVF."""
    fs, hop = b.sample_rate, b.hop
    n = b.num_samples
    params = csm_params(b)
    L = 2 * hop
    win = hann(L, periodic=True)
    t = np.arange(L) - hop                     # time relative to the frame centre
    sv = np.zeros(n + 2 * L)
    for i, p in enumerate(params):
        if p.K == 0:
            continue
        k = np.arange(1, p.K + 1)
        frame = p.A @ np.cos(np.outer(k * p.w0, t) + p.phi[:, None])
        s = i * hop                            # = (centre - hop) + L offset below
        sv[s + hop:s + hop + L] += win * frame
    sv = sv[L:L + n]
    # noise: unit white noise, high-passed at the local MVF, envelope-modulated, then given the spectral shape
    rng = np.random.default_rng(seed)
    f0_s = track_at_samples(b.contf0.values, b.grid.frame_shift, fs, n)
    voiced_mask = np.repeat([p.K > 0 for p in params], hop)[:n]
    proto = b.basis.first if b.basis is not None else None
    env = _noise_envelope(n, pulse_positions(f0_s, fs), f0_s, fs, b.envelope_kind, proto, voiced_mask)
    u = highpass_at(rng.standard_normal(n), b.mvf.values, fs, hop) * env
    sn = mglsa_filter(Waveform(u, fs), b.mgc, normalize=False).samples
    y = Waveform(sv + sn, fs)
    if return_parts:
        return y, sv, sn
    return y
