"""Voiced excitation modelling: GCIs, pitch-synchronous residual frames, PCA basis, HNR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt
from scipy.stats import skew

from .signal_core import (FrameGrid, ParamTrack, TrackKind, Waveform, extract_segments,
                          hann, normalized_autocorr)

HNR_MIN, HNR_MAX = 1e-4, 1e4


@dataclass(frozen=True)
class ResidualBasis:
    eigenvectors: np.ndarray    # (n_vectors, length), rows orthonormal
    eigenvalues: np.ndarray     # descending
    frame_count: int
    mean: np.ndarray | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.eigenvectors, float))
        lam = np.asarray(self.eigenvalues, float)
        if lam.size != v.shape[0]:
            raise ValueError("one eigenvalue per eigenvector")
        if np.any(lam < 0) or np.any(np.diff(lam) > 1e-12 * max(lam.max(initial=0), 1)):
            raise ValueError("eigenvalues must be non-negative and descending")
        object.__setattr__(self, "eigenvectors", v)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def length(self) -> int:
        return self.eigenvectors.shape[1]

    @property
    def first(self) -> np.ndarray:
        return self.eigenvectors[0]


@dataclass(frozen=True)
class PsFrames:
    frames: np.ndarray          # (k, basis_length), unit norm rows
    gcis: np.ndarray            # GCI each row came from
    lengths: np.ndarray         # two-period lengths before resampling


@dataclass(frozen=True)
class HnrWeights:
    """Frame-level voiced/unvoiced gains with ``w_v**2 + w_u**2 == 1``."""

    w_v: np.ndarray
    w_u: np.ndarray
    hop: int

    def frame_index(self, samples) -> np.ndarray:
        i = np.floor(np.asarray(samples, float) / self.hop).astype(int)
        return np.clip(i, 0, self.w_v.size - 1)

    def voiced_at(self, pulse_positions) -> np.ndarray:
        """Voiced gain for pulses at the given sample positions (frame = sample / hop)."""
        return self.w_v[self.frame_index(pulse_positions)]

    def unvoiced_per_sample(self, n_samples: int) -> np.ndarray:
        return self.w_u[self.frame_index(np.arange(n_samples))]


def _f0_per_sample(f0: ParamTrack, n: int, fs: int) -> np.ndarray:
    hop = f0.grid.frame_shift * fs
    idx = np.clip(np.round(np.arange(n) / hop).astype(int), 0, len(f0) - 1)
    return f0.values[idx]


def detect_gci(residual: Waveform, f0: ParamTrack, search: float = 0.3,
               rel_threshold: float = 0.05, lowpass_hz: float | None = 4000.0) -> np.ndarray:
    """Period-guided peak picking on the (low-passed) residual.

    Polarity is chosen from the sign of the skewness, so either impulse sign
    works. Starting from the strongest peak, the next GCI is searched within
    ``+-search * T0`` of the predicted position, walking forwards and backwards.
    Windows whose peak falls below ``rel_threshold`` of the global peak are
    stepped over without a detection.
    """
    f = np.asarray(f0.values, float)
    if np.any(f <= 0):
        raise ValueError("f0 must be strictly positive")
    fs = residual.sample_rate
    x = np.asarray(residual.samples, float)
    n = x.size
    if n == 0 or not np.any(x):
        return np.zeros(0, int)
    if lowpass_hz is not None and lowpass_hz < fs / 2 and n > 64:
        x = sosfiltfilt(butter(4, lowpass_hz, fs=fs, output="sos"), x)
    y = -x if skew(x) < 0 else x
    peak = y.max()
    if peak <= 0:
        return np.zeros(0, int)
    thr = rel_threshold * peak
    period = fs / _f0_per_sample(f0, n, fs)
    start = int(np.argmax(y))
    found = [start]
    for direction in (1, -1):
        cur = float(start)
        while True:
            t0 = period[int(np.clip(round(cur), 0, n - 1))]
            pred = cur + direction * t0
            lo = int(np.floor(pred - search * t0))
            hi = int(np.ceil(pred + search * t0)) + 1
            if (direction > 0 and lo >= n) or (direction < 0 and hi <= 0):
                break
            lo_c, hi_c = max(lo, 0), min(hi, n)
            if hi_c <= lo_c:
                break
            j = lo_c + int(np.argmax(y[lo_c:hi_c]))
            if y[j] >= thr and j != int(round(cur)):
                found.append(j)
                cur = float(j)
            else:
                cur = pred
    return np.unique(np.asarray(found, int))


def basis_length(f0: ParamTrack, fs: int) -> int:
    return 2 * int(round(fs / float(np.median(f0.values))))


def extract_ps_frames(residual: Waveform, gcis, f0: ParamTrack, length: int | None = None) -> PsFrames:
    """Hann-tapered two-period frames centred on GCIs, resampled to ``length`` and unit-normed."""
    gcis = np.asarray(gcis, int)
    if gcis.size == 0:
        raise ValueError("need at least one GCI")
    fs = residual.sample_rate
    x = np.asarray(residual.samples, float)
    n = x.size
    length = basis_length(f0, fs) if length is None else int(length)
    f_at = _f0_per_sample(f0, n, fs)
    rows, used, lens = [], [], []
    for g in gcis:
        if g < 0 or g >= n:
            continue
        L = int(round(2 * fs / f_at[g]))
        start = g - L // 2
        if start < 0 or start + L > n:
            continue
        seg = x[start:start + L] * hann(L, periodic=True)
        pos = np.arange(length) * L / length
        res = np.interp(pos, np.arange(L), seg)
        nrm = np.linalg.norm(res)
        if nrm == 0:
            continue
        rows.append(res / nrm)
        used.append(g)
        lens.append(L)
    frames = np.array(rows).reshape(len(rows), length)
    return PsFrames(frames, np.array(used, int), np.array(lens, int))


def pca_basis(frames, center: bool = True) -> ResidualBasis:
    """Principal directions of the frame set (population covariance).

    With ``center=False`` the decomposition is of the raw second-moment matrix,
    whose leading vector is the dominant average shape; this is the variant used
    for synthesis prototypes.
    """
    X = np.asarray(getattr(frames, "frames", frames), float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two frames")
    k, d = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean if center else X
    _, s, vt = np.linalg.svd(Xc, full_matrices=True)
    lam = np.zeros(d)
    lam[:s.size] = s ** 2 / k
    # fixed sign: the largest-magnitude entry of every vector is positive
    big = np.argmax(np.abs(vt), axis=1)
    vt = vt * np.where(vt[np.arange(d), big] < 0, -1.0, 1.0)[:, None]
    # round-off relative to the raw frame energy counts as zero
    lam[lam < 1e-14 * max(np.sum(X ** 2) / k, 1e-300)] = 0.0
    return ResidualBasis(vt, lam, k, mean if center else None)


def hnr_estimate(w: Waveform, grid: FrameGrid | None = None, f0_min: float = 80.0,
                 f0_max: float = 300.0, frame_length: float = 0.06) -> ParamTrack:
    """Frame-wise HNR from the highest normalised-autocorrelation peak in the period range."""
    fs = w.sample_rate
    if grid is None:
        grid = FrameGrid.for_waveform(w)
    L = max(int(round(frame_length * fs)), int(np.ceil(2 * fs / f0_min)) + 1) | 1
    lo = max(int(np.floor(fs / f0_max)), 1)
    hi = int(np.ceil(fs / f0_min))
    win = hann(L + 2)[1:-1]
    centres = np.round(grid.times() * fs).astype(int)
    seg = extract_segments(w.samples, centres, L)
    seg = seg - seg.mean(axis=1, keepdims=True)
    r = normalized_autocorr(seg * win, win, hi + 1)
    out = np.empty(grid.num_frames)
    for t in range(grid.num_frames):
        rr = r[t, lo - 1:hi + 2]
        mid = rr[1:-1]
        is_max = (mid >= rr[:-2]) & (mid > rr[2:])
        rmax = mid[is_max].max() if np.any(is_max) else 0.0
        rmax = min(max(rmax, 0.0), 1.0)
        out[t] = rmax / (1 - rmax) if rmax < 1 else np.inf
    return ParamTrack(np.clip(out, HNR_MIN, HNR_MAX), grid, TrackKind.HNR)


def hnr_weights(hnr, sample_rate: int = 16000) -> HnrWeights:
    h = np.asarray(getattr(hnr, "values", hnr), float)
    if np.any(h <= 0):
        raise ValueError("hnr must be positive")
    shift = hnr.grid.frame_shift if hasattr(hnr, "grid") else 0.005
    return HnrWeights(np.sqrt(h / (h + 1)), np.sqrt(1 / (h + 1)),
                      max(int(round(shift * sample_rate)), 1))
