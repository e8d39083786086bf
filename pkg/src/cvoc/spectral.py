"""Mel-cepstral envelope analysis, envelope evaluation, and envelope filtering.

Envelope level convention: ``exp(C(w))`` is the square root of the two-sided
power spectral density (per unit normalised frequency), i.e. the gain applied to
unit-power white excitation. A harmonic of amplitude ``a`` at spacing ``f0``
therefore sits at ``a = 2 * sqrt(f0 / fs) * exp(C)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_core import FrameGrid, Waveform, extract_segments, hann, next_pow2

LOG_FLOOR = np.log(1e-5)      # -100 dB amplitude floor, relative to the frame peak
LOG_FLOOR_ABS = np.log(1e-10)  # backstop for silent frames


@dataclass(frozen=True)
class MgcTrack:
    coeffs: np.ndarray          # (frames, order + 1)
    order: int
    alpha: float
    grid: FrameGrid
    sample_rate: int = 16000
    gamma: float = 0.0          # recorded only; the log (gamma = 0) form is used throughout

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[1] != self.order + 1:
            raise ValueError(f"expected {self.order + 1} coefficients per frame, got {c.shape[1]}")
        if c.shape[0] != self.grid.num_frames:
            raise ValueError("coefficient rows must match the grid")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __len__(self):
        return self.coeffs.shape[0]

    def replace(self, coeffs) -> "MgcTrack":
        return MgcTrack(coeffs, self.order, self.alpha, self.grid, self.sample_rate, self.gamma)


def warp(omega, alpha: float) -> np.ndarray:
    """All-pass phase map from linear to warped frequency (radians, 0..pi)."""
    omega = np.asarray(omega, float)
    return np.arctan2((1 - alpha ** 2) * np.sin(omega),
                      (1 + alpha ** 2) * np.cos(omega) - 2 * alpha)


def _cos_basis(omega, order, alpha):
    beta = warp(omega, alpha)
    n = np.arange(order + 1)[:, None]
    return np.cos(n * beta[None, :]), np.sin(n * beta[None, :])


def mgc_to_spectrum(c, freqs, alpha: float, fs: int = 16000) -> np.ndarray:
    """Real log-amplitude ``c0 + 2 sum c_n cos(n beta(w))`` at ``freqs`` (Hz)."""
    c = np.asarray(c, float)
    omega = 2 * np.pi * np.asarray(freqs, float) / fs
    cosb, _ = _cos_basis(np.atleast_1d(omega), c.shape[-1] - 1, alpha)
    weights = np.full(c.shape[-1], 2.0)
    weights[0] = 1.0
    return (c * weights) @ cosb


def mgc_to_complex(c, freqs, alpha: float, fs: int = 16000) -> np.ndarray:
    """Complex log spectrum of the minimum-phase envelope at ``freqs`` (Hz)."""
    c = np.asarray(c, float)
    omega = 2 * np.pi * np.asarray(freqs, float) / fs
    cosb, sinb = _cos_basis(np.atleast_1d(omega), c.shape[-1] - 1, alpha)
    weights = np.full(c.shape[-1], 2.0)
    weights[0] = 1.0
    cw = c * weights
    return cw @ cosb - 1j * (cw @ sinb)


def spectrum_to_mgc(logamp, alpha: float, order: int) -> np.ndarray:
    """Warped cepstrum from log amplitudes on a uniform grid over [0, pi] (rows = frames)."""
    logamp = np.atleast_2d(np.asarray(logamp, float))
    nbins = logamp.shape[1]
    n_fft = 2 * (nbins - 1)
    m = max(n_fft, 4 * (order + 1))
    m += m % 2
    # sample the spectrum on a uniform grid of the warped axis
    omega_lin = np.linspace(0, np.pi, nbins)
    omega_w = np.linspace(0, np.pi, m // 2 + 1)
    src = warp(omega_w, -alpha)
    resampled = np.array([np.interp(src, omega_lin, row) for row in logamp])
    return np.fft.irfft(resampled, m, axis=1)[:, :order + 1]


def _smoothed_power(frames, widths_bins):
    """Rectangular smoothing of each row over ``widths_bins`` (fractional) bins."""
    out = np.empty_like(frames)
    nb = frames.shape[1]
    for i, (row, wb) in enumerate(zip(frames, widths_bins)):
        if wb <= 1:
            out[i] = row
            continue
        half = wb / 2
        pad = int(np.ceil(half)) + 2
        ext = np.concatenate([row[pad:0:-1], row, row[-2:-pad - 2:-1]])
        cs = np.concatenate([[0.0], np.cumsum(ext)])
        pos = np.arange(nb) + pad + 0.5
        hi = np.interp(pos + half, np.arange(cs.size), cs)
        lo = np.interp(pos - half, np.arange(cs.size), cs)
        out[i] = (hi - lo) / wb
    return out


def power_spectra(w: Waveform, grid: FrameGrid, f0=None, nfft: int | None = None):
    """Per-frame PSD estimates on an ``nfft`` grid (rows = frames).

    With ``f0`` a pitch-adaptive three-period Hann window is used and the power
    spectrum is averaged over one harmonic spacing, which levels out the
    harmonic ripple; otherwise a fixed ``grid.frame_length`` Hann window is used.
    """
    fs = w.sample_rate
    centres = np.round(grid.times() * fs).astype(int)
    if f0 is not None:
        f0 = np.asarray(getattr(f0, "values", f0), float)
        if f0.size != grid.num_frames:
            raise ValueError("f0 length must match the grid")
        lengths = np.maximum(np.round(3 * fs / f0).astype(int), 16) | 1
    else:
        lengths = np.full(grid.num_frames, max(int(round(grid.frame_length * fs)), 16) | 1)
    if nfft is None:
        nfft = next_pow2(max(int(lengths.max()), 1024 * fs // 16000))
    nfft = max(nfft, next_pow2(int(lengths.max())))
    spec = np.empty((grid.num_frames, nfft // 2 + 1))
    for L in np.unique(lengths):
        rows = np.flatnonzero(lengths == L)
        win = hann(L + 2)[1:-1]
        seg = extract_segments(w.samples, centres[rows], L) * win
        spec[rows] = np.abs(np.fft.rfft(seg, nfft, axis=1)) ** 2 / np.sum(win ** 2)
    if f0 is not None:
        spec = _smoothed_power(spec, f0 * nfft / fs)
    return spec


def mgc_analyze(w: Waveform, grid: FrameGrid | None = None, order: int = 24,
                alpha: float = 0.42, f0=None) -> MgcTrack:
    """Frame-wise warped cepstral envelope of ``w``."""
    if order < 10:
        raise ValueError("order must be >= 10")
    if not 0 <= alpha < 1:
        raise ValueError("alpha must be in [0, 1)")
    if grid is None:
        grid = FrameGrid.for_waveform(w)
    spec = power_spectra(w, grid, f0)
    logamp = 0.5 * np.log(np.maximum(spec, 1e-300))
    # relative floor keeps the shape coefficients independent of the signal gain
    floor = np.maximum(logamp.max(axis=1, keepdims=True) + LOG_FLOOR, LOG_FLOOR_ABS)
    logamp = np.maximum(logamp, floor)
    coeffs = spectrum_to_mgc(logamp, alpha, order)
    return MgcTrack(coeffs, order, alpha, grid, w.sample_rate)


def _frame_responses(mgc: MgcTrack, nfft: int, sign: float = 1.0) -> np.ndarray:
    freqs = np.arange(nfft // 2 + 1) * mgc.sample_rate / nfft
    omega = 2 * np.pi * freqs / mgc.sample_rate
    cosb, sinb = _cos_basis(omega, mgc.order, mgc.alpha)
    weights = np.full(mgc.order + 1, 2.0)
    weights[0] = 1.0
    cw = mgc.coeffs * weights
    return np.exp(sign * (cw @ cosb - 1j * (cw @ sinb)))


def _ola_filter(x: np.ndarray, mgc: MgcTrack, sign: float) -> np.ndarray:
    fs = mgc.sample_rate
    hop = max(mgc.grid.hop(fs), 1)
    n = x.size
    nfft = next_pow2(2 * hop + 1024 * fs // 16000)
    resp = _frame_responses(mgc, nfft, sign)
    win = hann(2 * hop, periodic=True)
    n_frames = int(np.ceil(n / hop)) + 1
    out = np.zeros(n + nfft + 2 * hop)
    xp = np.concatenate([np.zeros(hop), x, np.zeros(2 * hop)])
    for m in range(n_frames):
        seg = xp[m * hop:m * hop + 2 * hop]
        if seg.size < 2 * hop:
            seg = np.pad(seg, (0, 2 * hop - seg.size))
        if not np.any(seg):
            continue
        H = resp[min(m, resp.shape[0] - 1)]
        y = np.fft.irfft(np.fft.rfft(seg * win, nfft) * H, nfft)
        out[m * hop:m * hop + nfft] += y
    return out[hop:hop + n]


def mglsa_filter(excitation: Waveform, mgc: MgcTrack, normalize: bool = True) -> Waveform:
    """Time-varying envelope filtering by frame-wise minimum-phase FFT filtering and overlap-add.

    Frames are Hann-weighted (length two hops, hop = frame shift) so neighbouring
    envelopes cross-fade. The result is scaled down only if its peak exceeds 1.
    """
    y = _ola_filter(np.asarray(excitation.samples, float), mgc, 1.0)
    if normalize:
        peak = np.max(np.abs(y)) if y.size else 0.0
        if peak > 1.0:
            y = y / peak
    return Waveform(y, excitation.sample_rate)


def inverse_filter(w: Waveform, mgc: MgcTrack) -> Waveform:
    """Residual obtained by applying the inverse (also minimum-phase) envelope."""
    return Waveform(_ola_filter(np.asarray(w.samples, float), mgc, -1.0), w.sample_rate)


def spectral_flatness(x, nfft: int = 1024) -> float:
    """Geometric over arithmetic mean of the averaged power spectrum."""
    x = np.asarray(getattr(x, "samples", x), float)
    nseg = max(x.size // nfft, 1)
    segs = x[:nseg * nfft].reshape(nseg, -1) if x.size >= nfft else x[None, :]
    p = np.mean(np.abs(np.fft.rfft(segs * hann(segs.shape[1]), nfft, axis=1)) ** 2, axis=0)[1:]
    p = np.maximum(p, 1e-300)
    return float(np.exp(np.mean(np.log(p))) / np.mean(p))
