"""Continuous F0 estimation, adaptive refinements, noise injection and pitch-error metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import butter, sosfiltfilt

from .signal_core import (FrameGrid, ParamTrack, TrackKind, Waveform, blackman,
                          extract_segments, hann, normalized_autocorr,
                          nuttall, parabolic_peak)


class LowConfidenceWarning(UserWarning):
    """Raised when an estimator had no usable evidence and fell back to a prior."""


@dataclass(frozen=True)
class PitchConfig:
    f0_min: float = 80.0
    f0_max: float = 300.0
    frame_shift: float = 0.005
    harmonics_k: int = 6
    # baseline tracker tuning
    octave_cost: float = 0.02
    meas_var: float = 4e-4      # log-F0 variance of a perfectly salient measurement
    state_var: float = 4e-4     # log-F0 random-walk variance per frame
    salience_eps: float = 1e-3
    peak_ratio: float = 0.9
    lowpass_hz: float | None = None   # band limit applied before the autocorrelation

    def __post_init__(self):
        if not 0 < self.f0_min < self.f0_max:
            raise ValueError("need 0 < f0_min < f0_max")
        if self.frame_shift <= 0 or self.harmonics_k < 1:
            raise ValueError("invalid frame_shift or harmonics_k")

    def check_rate(self, sample_rate: int):
        if self.f0_max >= sample_rate / 2:
            raise ValueError("f0_max must lie below Nyquist")


@dataclass
class KalmanState:
    """Scalar linear-Gaussian model  x_t = A x_{t-1} + q,  y_t = B x_t + r."""

    x: float
    P: float
    Q: float
    R: float
    A: float = 1.0
    B: float = 1.0

    def __post_init__(self):
        if min(self.P, self.Q, self.R) <= 0:
            raise ValueError("P, Q and R must be positive")


@dataclass(frozen=True)
class PitchErrorReport:
    gpe: float
    mfpe: float
    std: float
    rmse: float

    def as_dict(self):
        return {"gpe": self.gpe, "mfpe": self.mfpe, "std": self.std, "rmse": self.rmse}


def kalman_smooth(y, state: KalmanState, R=None, Q=None):
    """Forward Kalman filter followed by the Rauch-Tung-Striebel backward pass.

    ``y`` may contain NaN for missing measurements. ``R`` and ``Q`` optionally
    give per-step covariances overriding the constants in ``state``.
    Returns smoothed means and variances.
    """
    y = np.asarray(y, float)
    n = y.size
    R = np.full(n, state.R) if R is None else np.broadcast_to(np.asarray(R, float), (n,))
    Q = np.full(n, state.Q) if Q is None else np.broadcast_to(np.asarray(Q, float), (n,))
    A, B = state.A, state.B
    xf = np.empty(n)
    pf = np.empty(n)
    xp = np.empty(n)
    pp = np.empty(n)
    x, p = state.x, state.P
    for t in range(n):
        if t > 0:
            x, p = A * x, A * A * p + Q[t]
        xp[t], pp[t] = x, p
        if np.isfinite(y[t]):
            k = p * B / (B * B * p + R[t])
            x = x + k * (y[t] - B * x)
            p = (1 - k * B) * p
        xf[t], pf[t] = x, p
    xs = xf.copy()
    ps = pf.copy()
    for t in range(n - 2, -1, -1):
        c = pf[t] * A / pp[t + 1]
        xs[t] = xf[t] + c * (xs[t + 1] - xp[t + 1])
        ps[t] = pf[t] + c * c * (ps[t + 1] - pp[t + 1])
    return xs, ps


def _grid_for(w: Waveform, cfg: PitchConfig) -> FrameGrid:
    return FrameGrid.for_waveform(w, cfg.frame_shift, max(0.025, cfg.frame_shift))


def _centres(grid: FrameGrid, fs: int) -> np.ndarray:
    return np.round(grid.times() * fs).astype(int)


def _acf_frames(w: Waveform, grid: FrameGrid, length_s: float, max_lag: int):
    fs = w.sample_rate
    n = int(round(length_s * fs)) | 1
    win = hann(n + 2)[1:-1]
    seg = extract_segments(w.samples, _centres(grid, fs), n)
    seg = seg - seg.mean(axis=1, keepdims=True)
    return normalized_autocorr(seg * win, win, max_lag), np.sum(seg ** 2, axis=1)


def _band_limit(w: Waveform, cutoff) -> Waveform:
    if cutoff is None or cutoff >= w.sample_rate / 2 or len(w) < 64:
        return w
    sos = butter(6, cutoff, fs=w.sample_rate, output="sos")
    return Waveform(sosfiltfilt(sos, w.samples), w.sample_rate)


def _pick_peak(r, lo, hi, cfg: PitchConfig, fs):
    """Autocorrelation peak in lags [lo, hi]; returns (lag, salience) or None.

    Periodic signals repeat their peak at every multiple of the period, so the
    shortest-lag peak within ``peak_ratio`` of the best octave-penalised score
    is taken.
    """
    seg = r[lo - 1:hi + 2]
    if seg.size < 3:
        return None
    mid = seg[1:-1]
    idx = np.flatnonzero((mid >= seg[:-2]) & (mid > seg[2:]) & (mid > 0)) + lo
    if idx.size == 0:
        return None
    peaks = [parabolic_peak(r, i) for i in idx]
    scores = np.array([h - cfg.octave_cost * np.log2(cfg.f0_min * lag / fs) for lag, h in peaks])
    best = scores.max()
    j = int(np.flatnonzero(scores >= cfg.peak_ratio * best)[0])
    lag, height = peaks[j]
    return lag, min(max(height, 0.0), 1.0)


def contf0_baseline(w: Waveform, cfg: PitchConfig = PitchConfig()) -> ParamTrack:
    """Continuous F0: autocorrelation peak per frame, then RTS smoothing in log-F0.

    Frames without a usable peak are treated as missing measurements so the
    smoother bridges them; the output is positive everywhere.
    """
    cfg.check_rate(w.sample_rate)
    fs = w.sample_rate
    grid = _grid_for(w, cfg)
    if grid.num_frames < 3:
        raise ValueError("waveform shorter than 3 frames")
    lo = max(int(np.floor(fs / cfg.f0_max)), 2)
    hi = int(np.ceil(fs / cfg.f0_min))
    r, energy = _acf_frames(_band_limit(w, cfg.lowpass_hz), grid,
                            max(0.025, 3.0 / cfg.f0_min), hi + 2)
    y = np.full(grid.num_frames, np.nan)
    sal = np.zeros(grid.num_frames)
    floor = 1e-10 * max(energy.max(), 1e-300)
    for t in range(grid.num_frames):
        if energy[t] <= floor:
            continue
        pk = _pick_peak(r[t], lo, hi, cfg, fs)
        if pk is None or pk[1] <= 0:
            continue
        f = np.clip(fs / pk[0], cfg.f0_min, cfg.f0_max)
        y[t], sal[t] = np.log(f), pk[1]
    prior = np.log(np.sqrt(cfg.f0_min * cfg.f0_max))
    if not np.any(np.isfinite(y)):
        warnings.warn("no periodic evidence found; returning prior mean", LowConfidenceWarning)
        return ParamTrack(np.full(grid.num_frames, np.exp(prior)), grid, TrackKind.CONTF0)
    state = KalmanState(prior, 1.0, cfg.state_var, cfg.meas_var)
    R = cfg.meas_var / (sal + cfg.salience_eps)
    xs, _ = kalman_smooth(y, state, R=R)
    f0 = np.clip(np.exp(xs), cfg.f0_min, cfg.f0_max)
    return ParamTrack(f0, grid, TrackKind.CONTF0)


def _check_aligned(f0: ParamTrack, w: Waveform):
    n = FrameGrid.for_waveform(w, f0.grid.frame_shift).num_frames
    if len(f0) != n:
        raise ValueError(f"track length {len(f0)} does not match waveform ({n} frames)")


def sqi(w: Waveform, f0_values, frame_shift: float, f0_min: float) -> np.ndarray:
    """Signal-quality index: normalised autocorrelation at the lag of the given F0."""
    fs = w.sample_rate
    grid = FrameGrid(frame_shift, max(frame_shift, 0.025), len(f0_values))
    lags = fs / np.asarray(f0_values, float)
    max_lag = int(np.ceil(lags.max())) + 2
    r, _ = _acf_frames(w, grid, max(0.025, 3.0 / f0_min, 2.2 * lags.max() / fs), max_lag)
    i = np.floor(lags).astype(int)
    frac = lags - i
    rows = np.arange(len(lags))
    q = (1 - frac) * r[rows, i] + frac * r[rows, i + 1]
    return np.clip(q, 0.0, 1.0)


def refine_akf(f0: ParamTrack, w: Waveform, cfg: PitchConfig = PitchConfig(),
               max_iter: int = 20, tol: float = 0.1, q0: float = 4e-4, r0: float = 4e-4,
               eps: float = 1e-2) -> ParamTrack:
    """Adaptive Kalman re-smoothing with SQI-driven covariances.

    The measurement covariance follows the SQI at the measured F0,
    ``R_t = r0 (1 - SQI + eps)^2``, so frames whose lag does not match the
    signal are distrusted; the state covariance ``Q_t = q0 (SQI + eps)`` uses
    the smaller of the SQI at the measurement and at the current estimate,
    and is updated every pass.
    ``max_iter = 0`` returns the input unchanged.
    """
    _check_aligned(f0, w)
    y = np.log(f0.values)
    est = f0.values.copy()
    if max_iter <= 0:
        return f0
    s_meas = sqi(w, est, f0.grid.frame_shift, cfg.f0_min)
    R = r0 * (1 - s_meas + eps) ** 2
    for _ in range(max_iter):
        s_est = sqi(w, est, f0.grid.frame_shift, cfg.f0_min)
        Q = q0 * (np.minimum(s_meas, s_est) + eps)
        xs, _ = kalman_smooth(y, KalmanState(y[0], r0, q0, r0), R=R, Q=Q)
        new = np.exp(xs)
        delta = np.max(np.abs(new - est))
        est = new
        if delta < tol:
            break
    return f0.replace(est)


def _clamp_track(values, cfg: PitchConfig):
    lo, hi = cfg.f0_min / 2, 2 * cfg.f0_max
    if np.any((values < lo) | (values > hi)):
        warnings.warn(f"F0 values outside [{lo}, {hi}] Hz clamped", RuntimeWarning)
    return np.clip(values, lo, hi)


def _flanagan_if(z: np.ndarray, fs: float) -> np.ndarray:
    """Instantaneous frequency (Hz) of a complex band signal.

    Flanagan's ``(x y' - y x') / |z|^2`` with the derivative taken as a
    central phase difference, which is exact for a stationary sinusoid.
    """
    zp = np.concatenate([z[:1], z, z[-1:]])
    prod = zp[2:] * np.conj(zp[:-2])
    f = np.angle(prod) * fs / (4 * np.pi)
    f[0] = np.angle(z[1] * np.conj(z[0])) * fs / (2 * np.pi) if z.size > 1 else 0.0
    f[-1] = np.angle(z[-1] * np.conj(z[-2])) * fs / (2 * np.pi) if z.size > 1 else 0.0
    return np.nan_to_num(f)


def _timewarp_pass(values, w: Waveform, frame_shift, cfg: PitchConfig):
    fs = w.sample_rate
    x = w.samples
    n = x.size
    t_frames = np.arange(values.size) * frame_shift
    t = np.arange(n) / fs
    if values.size >= 4:
        f_s = CubicSpline(t_frames, values)(np.clip(t, 0, t_frames[-1]))
    else:
        f_s = np.interp(t, t_frames, values)
    f_s = np.clip(f_s, cfg.f0_min / 2, 2 * cfg.f0_max)
    f_ref = float(np.median(values))
    # warped time: tau' = f0(t)/f_ref, so the current trajectory becomes f_ref
    tau = np.concatenate([[0.0], np.cumsum(0.5 * (f_s[1:] + f_s[:-1]) / f_ref) / fs])
    m = int(np.floor(tau[-1] * fs)) + 1
    tau_grid = np.arange(m) / fs
    t_of_tau = np.interp(tau_grid, tau, t)
    xw = CubicSpline(t, x)(t_of_tau)
    half = int(round(2 * fs / f_ref))
    win = nuttall(2 * half + 1)
    k_max = max(1, min(cfg.harmonics_k, int((fs / 2) / f_ref) - 1))
    ifs = []
    amps = []
    idx = np.arange(-half, half + 1)
    for k in range(1, k_max + 1):
        h = win * np.exp(2j * np.pi * k * f_ref * idx / fs)
        z = np.convolve(xw, h, mode="same")
        ifs.append(_flanagan_if(z, fs) / k)
        amps.append(np.abs(z))
    ifs = np.array(ifs)
    amps = np.array(amps)
    wts = amps / np.maximum(amps.sum(axis=0, keepdims=True), 1e-300)
    f_warped = np.sum(wts * ifs, axis=0)
    # back to the original time axis: frame at time t sits at tau(t)
    tau_frames = np.interp(t_frames, t, tau)
    f_w_frames = np.interp(tau_frames * fs, np.arange(m), f_warped)
    f_cur = np.interp(t_frames, t, f_s)
    out = f_w_frames * f_cur / f_ref
    bad = ~np.isfinite(out) | (out <= 0)
    out[bad] = values[bad]
    return out


def combine_harmonic_estimates(ifs, weights=None):
    """Weighted average of per-harmonic estimates ``IF_k / k`` with weights summing to 1."""
    ifs = np.asarray(ifs, float)
    k = np.arange(1, ifs.shape[0] + 1).reshape((-1,) + (1,) * (ifs.ndim - 1))
    if weights is None:
        weights = np.ones_like(ifs)
    weights = np.asarray(weights, float)
    weights = weights / np.sum(weights, axis=0, keepdims=True)
    return np.sum(weights * ifs / k, axis=0)


def refine_timewarp(f0: ParamTrack, w: Waveform, cfg: PitchConfig = PitchConfig(),
                    iterations: int = 2) -> ParamTrack:
    """Harmonic instantaneous-frequency refinement on a pitch-flattened time axis."""
    _check_aligned(f0, w)
    values = _clamp_track(f0.values.copy(), cfg)
    for _ in range(iterations):
        values = _timewarp_pass(values, w, f0.grid.frame_shift, cfg)
        values = np.clip(values, cfg.f0_min / 2, 2 * cfg.f0_max)
    return f0.replace(values)


def _stonemask_frame(x, centre, f0, fs, k_max, periods):
    half = max(int(round(periods * 0.5 * fs / f0)), 2)
    # near the ends, slide the window inside the signal: zero padding reads as an onset
    if x.size > 2 * half:
        centre = min(max(centre, half), x.size - 1 - half)
    seg = extract_segments(x, [centre], 2 * half + 1)[0]
    u = np.arange(-half, half + 1) / half
    win = blackman(2 * half + 1)
    # time derivative of the Blackman window (per second)
    dwin = (-0.5 * np.pi * np.sin(np.pi * u) - 0.16 * np.pi * np.sin(2 * np.pi * u)) * fs / half
    offs = np.arange(-half, half + 1)
    k_max = min(k_max, int((fs / 2) / f0) - 1)
    if k_max < 1:
        return f0
    num = den = 0.0
    for k in range(1, k_max + 1):
        # evaluate the DTFT directly at k * f0
        e = np.exp(-2j * np.pi * k * f0 * offs / fs)
        X = np.sum(seg * win * e)
        Xd = np.sum(seg * dwin * e)
        a = np.abs(X)
        if a <= 0:
            continue
        inst = k * f0 - np.imag(Xd * np.conj(X)) / (a * a) / (2 * np.pi)
        num += a * inst
        den += a * k
    return num / den if den > 0 else f0


def refine_stonemask(f0: ParamTrack, w: Waveform, cfg: PitchConfig = PitchConfig(),
                     iterations: int = 2, periods: float = 3.0,
                     max_rel_change: float = 0.2) -> ParamTrack:
    """Per-frame harmonic IF refinement with a Blackman window ``periods`` T0 long."""
    _check_aligned(f0, w)
    fs = w.sample_rate
    x = w.samples
    centres = _centres(f0.grid, fs)
    out = f0.values.copy()
    for t in range(out.size):
        cand = out[t]
        if cand < cfg.f0_min / 2:
            out[t] = out[t - 1] if t > 0 else cand
            continue
        cur = cand
        for _ in range(iterations):
            new = _stonemask_frame(x, centres[t], cur, fs, cfg.harmonics_k, periods)
            if not np.isfinite(new) or new <= 0 or abs(new - cand) > max_rel_change * cand:
                cur = cand
                break
            cur = new
        out[t] = cur
    return f0.replace(out)


def add_noise(w: Waveform, kind: str = "white", snr_db: float = 0.0, seed=None) -> Waveform:
    """Add white or pink (-3 dB/octave) noise at an exact SNR."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    n = len(w)
    noise = rng.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(noise)
        f = np.arange(spec.size, dtype=float)
        f[0] = 1.0
        spec /= np.sqrt(f)
        spec[0] = 0.0
        noise = np.fft.irfft(spec, n)
    elif kind != "white":
        raise ValueError(f"unknown noise kind {kind!r}")
    p_sig = np.mean(w.samples ** 2)
    p_noise = np.mean(noise ** 2)
    if p_sig == 0 or p_noise == 0:
        return w
    noise *= np.sqrt(p_sig / p_noise * 10 ** (-snr_db / 10))
    return Waveform(w.samples + noise, w.sample_rate)


def pitch_error_metrics(est: ParamTrack, ref: ParamTrack, voicing_ref=None,
                        threshold: float = 0.2) -> PitchErrorReport:
    """GPE (%), fine-error mean and spread (Hz), and RMSE (Hz) over reference-voiced frames."""
    e_vals = np.asarray(getattr(est, "values", est), float)
    r_vals = np.asarray(getattr(ref, "values", ref), float)
    if e_vals.size != r_vals.size:
        raise ValueError("est and ref lengths differ")
    v = r_vals > 0 if voicing_ref is None else np.asarray(voicing_ref, bool)
    if v.size != r_vals.size:
        raise ValueError("voicing mask length differs")
    if not np.any(v):
        raise ValueError("no voiced reference frames")
    diff = e_vals[v] - r_vals[v]
    rel = np.abs(diff) / r_vals[v]
    gross = rel > threshold
    gpe = 100.0 * gross.sum() / v.sum()
    fine = diff[~gross]
    mfpe = float(np.mean(fine)) if fine.size else 0.0
    std = float(np.sqrt(np.mean((fine - mfpe) ** 2))) if fine.size else 0.0
    rmse = float(np.sqrt(np.mean(diff ** 2)))
    return PitchErrorReport(float(gpe), mfpe, std, rmse)


def psd_periodogram(t, frame_shift=None):
    """Mean-removed one-sided periodogram of a track; returns (freqs Hz, power).

    Power is scaled so that ``power.sum() == N * var(track)``.
    """
    vals = np.asarray(getattr(t, "values", t), float)
    if frame_shift is None:
        frame_shift = t.grid.frame_shift if hasattr(t, "grid") else 0.005
    n = vals.size
    if n < 8:
        raise ValueError("track must have at least 8 frames")
    x = vals - vals.mean()
    spec = np.abs(np.fft.rfft(x)) ** 2 / n
    spec[1:] *= 2
    if n % 2 == 0:
        spec[-1] /= 2
    freqs = np.fft.rfftfreq(n, frame_shift)
    return freqs, spec
