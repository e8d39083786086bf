"""Maximum voiced frequency from the sinusoidal likeness of spectral peaks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .signal_core import ParamTrack, TrackKind, Waveform, extract_segments, hann, next_pow2


@dataclass(frozen=True)
class SlmConfig:
    periods_per_window: float = 3.0
    fft_oversample: int = 4
    dp_gamma: float = 1.0
    frame_shift: float = 0.005
    peak_margin_db: float = 6.0
    dynamic_range_db: float = 60.0
    # Likeness values are squeezed into a voicing score before entering the cost:
    # noise peaks also correlate well with the main lobe, so only the top of the
    # range is informative.
    lambda_floor: float = 0.99
    unvoiced_floor_hz: float = 1000.0
    unvoiced_score: float = 0.3

    def __post_init__(self):
        if self.fft_oversample < 4:
            raise ValueError("fft_oversample must be >= 4")
        if self.dp_gamma < 0:
            raise ValueError("dp_gamma must be >= 0")
        if not 0 <= self.lambda_floor < 1:
            raise ValueError("lambda_floor must be in [0, 1)")


@dataclass
class FramePeaks:
    freqs: np.ndarray       # Hz, ascending
    lambdas: np.ndarray     # likeness in [0, 1]


def _dirichlet(theta, L):
    """DTFT of an L-point rectangular window starting at n = 0."""
    theta = np.asarray(theta, float)
    half = np.sin(theta / 2)
    small = np.abs(half) < 1e-12
    ratio = np.where(small, L, np.sin(L * theta / 2) / np.where(small, 1.0, half))
    return np.exp(-0.5j * theta * (L - 1)) * ratio


def _window_transform(L, freqs_hz, bins, nfft, fs):
    """DTFT of ``hann(L) * exp(j 2 pi f n / fs)`` at FFT ``bins``, one row per frequency.

    Closed form: the symmetric Hann window is a sum of three shifted rectangles.
    """
    theta = 2 * np.pi * (bins[None, :] / nfft - (np.asarray(freqs_hz) / fs)[:, None])
    if L < 2:
        return _dirichlet(theta, L)
    step = 2 * np.pi / (L - 1)
    return (0.5 * _dirichlet(theta, L) - 0.25 * _dirichlet(theta - step, L)
            - 0.25 * _dirichlet(theta + step, L))


def slm_peaks(frame: np.ndarray, fs: int, cfg: SlmConfig = SlmConfig()) -> FramePeaks:
    """Peak frequencies and likeness scores for one unwindowed frame."""
    L = frame.size
    win = hann(L)
    nfft = next_pow2(cfg.fft_oversample * L)
    X = np.fft.rfft(frame * win, nfft)
    mag = np.abs(X)
    if not np.any(mag > 0):
        return FramePeaks(np.zeros(0), np.zeros(0))
    logmag = np.log(np.maximum(mag, 1e-300) / (np.sqrt(L) * fs))
    m = logmag[1:-1]
    maxima = np.flatnonzero((m > logmag[:-2]) & (m >= logmag[2:])) + 1
    # a peak must stand out from its surrounding valleys; a plain median threshold
    # misses harmonics whose main lobes overlap under a three-period window
    db = np.log(10) / 20
    idx, _ = find_peaks(logmag, prominence=cfg.peak_margin_db * db)
    idx = idx[logmag[idx] > logmag.max() - cfg.dynamic_range_db * db]
    if idx.size == 0:
        return FramePeaks(np.zeros(0), np.zeros(0))
    a, b, c = logmag[maxima - 1], logmag[maxima], logmag[maxima + 1]
    den = a - 2 * b + c
    d = np.where(den < 0, 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    all_freqs = (maxima + d) * fs / nfft
    keep = np.isin(maxima, idx)
    freqs = all_freqs[keep]
    # neighbourhood = main lobe of the Hann window, +-2/L Hz. Every local maximum
    # whose main lobe reaches into it (detected or not) is fitted jointly and removed.
    hb = int(np.ceil(2 * nfft / L))
    reach = 4.0 * fs / L
    lam = np.empty(idx.size)
    for j, k in enumerate(idx):
        bins = np.arange(max(k - hb, 0), min(k + hb + 1, mag.size))
        near = np.flatnonzero(np.abs(all_freqs - freqs[j]) < reach)
        W = _window_transform(L, all_freqs[near], bins, nfft, fs)
        S = X[bins]
        own = int(np.flatnonzero(all_freqs[near] == freqs[j])[0])
        if near.size > 1:
            amp, *_ = np.linalg.lstsq(W.T, S, rcond=None)
            S = S - np.delete(W, own, axis=0).T @ np.delete(amp, own)
        Wi = W[own]
        den = np.sqrt(np.sum(np.abs(S) ** 2) * np.sum(np.abs(Wi) ** 2))
        lam[j] = np.abs(np.sum(S * np.conj(Wi))) / den if den > 0 else 0.0
    return FramePeaks(freqs, np.clip(lam, 0.0, 1.0))


def voicing_score(lam, cfg: SlmConfig = SlmConfig()) -> np.ndarray:
    return np.clip((np.asarray(lam) - cfg.lambda_floor) / (1 - cfg.lambda_floor), 0.0, 1.0)


def boundary_error(freqs, scores, boundary: float) -> float:
    """Mismatch of a voiced/unvoiced split at ``boundary``: peaks below should score 1, above 0."""
    freqs = np.asarray(freqs)
    scores = np.asarray(scores)
    if freqs.size == 0:
        return 0.0
    below = freqs < boundary
    return float((np.sum((1 - scores[below]) ** 2) + np.sum(scores[~below] ** 2)) / freqs.size)


def frame_candidates(peaks: FramePeaks, fs: int, cfg: SlmConfig = SlmConfig()):
    """Candidate MVF values with their local errors.

    Candidate ``i`` declares peaks ``1..i-1`` voiced and the rest noise; its
    frequency is the midpoint between peak ``i-1`` and peak ``i``. The last
    candidate (every peak voiced) sits at Nyquist.
    """
    scores = voicing_score(peaks.lambdas, cfg)
    f = np.asarray(peaks.freqs, float)
    edges = np.concatenate([[0.0], f, [fs / 2.0]])
    cands = list(0.5 * (edges[:-2] + edges[1:-1])) + [fs / 2.0]
    if scores.size == 0 or np.all(scores < cfg.unvoiced_score):
        cands.append(cfg.unvoiced_floor_hz)
    cands = np.unique(np.asarray(cands, float))
    errs = np.array([boundary_error(f, scores, b) for b in cands])
    return cands, errs


def dp_track(cands, errs, gamma: float, fs: int):
    """First-order Viterbi over per-frame candidates; returns chosen values and indices."""
    n = len(cands)
    if n == 0:
        return np.zeros(0), np.zeros(0, int)
    cost = np.asarray(errs[0], float)
    back = []
    for m in range(1, n):
        jump = ((cands[m][:, None] - cands[m - 1][None, :]) / (fs / 2)) ** 2
        total = cost[None, :] + gamma * jump
        arg = np.argmin(total, axis=1)
        back.append(arg)
        cost = total[np.arange(arg.size), arg] + errs[m]
    path = np.empty(n, int)
    path[-1] = int(np.argmin(cost))
    for m in range(n - 1, 0, -1):
        path[m - 1] = back[m - 1][path[m]]
    vals = np.array([cands[m][path[m]] for m in range(n)])
    return vals, path


def path_cost(cands, errs, path, gamma: float, fs: int) -> float:
    total = sum(float(errs[m][path[m]]) for m in range(len(path)))
    for m in range(1, len(path)):
        total += gamma * ((cands[m][path[m]] - cands[m - 1][path[m - 1]]) / (fs / 2)) ** 2
    return total


def estimate_mvf_slm(w: Waveform, f0: ParamTrack, cfg: SlmConfig = SlmConfig(),
                     return_candidates: bool = False):
    """MVF track (Hz) aligned with ``f0``."""
    f = np.asarray(f0.values, float)
    if np.any(f <= 0):
        raise ValueError("f0 must be strictly positive")
    fs = w.sample_rate
    centres = np.round(f0.grid.times() * fs).astype(int)
    cands, errs = [], []
    for c, fv in zip(centres, f):
        L = max(int(round(cfg.periods_per_window * fs / fv)), 16)
        frame = extract_segments(w.samples, [c], L)[0]
        cc, ee = frame_candidates(slm_peaks(frame, fs, cfg), fs, cfg)
        cands.append(cc)
        errs.append(ee)
    vals, path = dp_track(cands, errs, cfg.dp_gamma, fs)
    vals = np.clip(vals, f, fs / 2.0)
    track = ParamTrack(vals, f0.grid, TrackKind.MVF)
    if return_candidates:
        return track, cands, errs, path
    return track
