"""Objective distances between a reference and a test signal.

Band-based measures (fwSNRseg, WSS, NCM) use 25 triangular mel-spaced bands
on 30 ms Hann frames with a quarter-frame hop. Band weights are the reference
band magnitude raised to ``BAND_WEIGHT_POWER``; absolute values therefore
differ from toolkits that use articulation-index tables, orderings do not.
LPC-based measures (LLR, IS) use order 16 autocorrelation LPC.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_toeplitz, toeplitz

from .signal_core import FrameGrid, Waveform, analytic_signal, hann, next_pow2
from .spectral import mgc_analyze

N_BANDS = 25
BAND_WEIGHT_POWER = 0.2
FWSNR_MIN, FWSNR_MAX = -10.0, 35.0
NCM_SNR_MIN, NCM_SNR_MAX = -15.0, 15.0
WSS_KMAX, WSS_KLOCMAX = 20.0, 1.0
LPC_ORDER = 16
MCD_SCALE = 10.0 / np.log(10) * np.sqrt(2.0)
FRAME_S = 0.030
ENERGY_FLOOR = 1e-10

KEYS = ("fwsnrseg", "ncm", "wss", "llr", "is_dist", "lsd", "mcd", "corr")


@dataclass(frozen=True)
class MetricReport:
    fwsnrseg: float
    ncm: float
    wss: float
    llr: float
    is_dist: float
    lsd: float
    mcd: float
    corr: float
    skipped_lpc_frames: int = 0

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in KEYS}

    def to_line(self) -> str:
        return json.dumps(self.as_dict())


def _align(ref, test):
    r = ref if isinstance(ref, Waveform) else Waveform(np.asarray(ref, float), 16000)
    t = test if isinstance(test, Waveform) else Waveform(np.asarray(test, float), r.sample_rate)
    if r.sample_rate != t.sample_rate:
        raise ValueError("sample rates differ")
    n = min(len(r), len(t))
    return r.samples[:n], t.samples[:n], r.sample_rate


def _frames(x, fs):
    L = int(round(FRAME_S * fs))
    hop = L // 4
    if x.size < L:
        x = np.pad(x, (0, L - x.size))
    n = 1 + (x.size - L) // hop
    idx = np.arange(L)[None, :] + hop * np.arange(n)[:, None]
    return x[idx], L


def mel_filterbank(n_bands: int, nfft: int, fs: int) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale between 0 and Nyquist."""
    mel = lambda f: 2595 * np.log10(1 + f / 700)
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)
    edges = imel(np.linspace(0, mel(fs / 2), n_bands + 2))
    f = np.arange(nfft // 2 + 1) * fs / nfft
    fb = np.zeros((n_bands, f.size))
    for i in range(n_bands):
        lo, c, hi = edges[i:i + 3]
        fb[i] = np.clip(np.minimum((f - lo) / (c - lo), (hi - f) / (hi - c)), 0, None)
    return fb


def _band_mags(x, fs):
    """Critical-band magnitudes per frame, plus the frame energies."""
    fr, L = _frames(x, fs)
    nfft = next_pow2(L)
    spec = np.abs(np.fft.rfft(fr * hann(L), nfft, axis=1)) ** 2
    fb = mel_filterbank(N_BANDS, nfft, fs)
    return np.sqrt(spec @ fb.T), np.sum(fr ** 2, axis=1)


def fwsnrseg(ref, test) -> float:
    """Frequency-weighted segmental SNR (dB) on level-normalised band spectra."""
    x, y, fs = _align(ref, test)
    X, ex = _band_mags(x, fs)
    Y, _ = _band_mags(y, fs)
    keep = ex > ENERGY_FLOOR
    if not np.any(keep):
        raise ValueError("reference is silent")
    X, Y = X[keep], Y[keep]
    X = X / X.sum(axis=1, keepdims=True)
    ys = Y.sum(axis=1, keepdims=True)
    Y = np.where(ys > 0, Y / np.where(ys > 0, ys, 1.0), 0.0)
    W = X ** BAND_WEIGHT_POWER
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(X ** 2 / (X - Y) ** 2)
    snr = np.clip(np.nan_to_num(snr, nan=FWSNR_MAX, posinf=FWSNR_MAX), FWSNR_MIN, FWSNR_MAX)
    return float(np.mean(np.sum(W * snr, axis=1) / np.sum(W, axis=1)))


def wss(ref, test) -> float:
    """Weighted spectral slope distance between the dB band spectra."""
    x, y, fs = _align(ref, test)
    X, ex = _band_mags(x, fs)
    Y, _ = _band_mags(y, fs)
    keep = ex > ENERGY_FLOOR
    if not np.any(keep):
        raise ValueError("reference is silent")
    Xd = 20 * np.log10(np.maximum(X[keep], 1e-10))
    Yd = 20 * np.log10(np.maximum(Y[keep], 1e-10))
    sx, sy = np.diff(Xd, axis=1), np.diff(Yd, axis=1)
    # weight from the reference level: global peak distance and nearest local peak distance
    dmax = Xd.max(axis=1, keepdims=True)
    loc = np.empty_like(sx)
    for j in range(sx.shape[0]):
        for i in range(sx.shape[1]):
            k = i
            if sx[j, i] > 0:
                while k < sx.shape[1] and sx[j, k] > 0:
                    k += 1
            else:
                while k > 0 and sx[j, k - 1] <= 0:
                    k -= 1
            loc[j, i] = Xd[j, min(k, Xd.shape[1] - 1)]
    W = (WSS_KMAX / (WSS_KMAX + dmax - Xd[:, :-1])) * (WSS_KLOCMAX / (WSS_KLOCMAX + loc - Xd[:, :-1]))
    return float(np.mean(np.sum(W * (sy - sx) ** 2, axis=1) / np.sum(W, axis=1)))


def ncm(ref, test) -> float:
    """Normalised covariance of band envelopes mapped to [0, 1] (1 = identical)."""
    x, y, fs = _align(ref, test)
    n = x.size
    nfft = next_pow2(n)
    fb = mel_filterbank(N_BANDS, nfft, fs)
    Xs, Ys = np.fft.rfft(x, nfft), np.fft.rfft(y, nfft)
    ex, L = _frames(x, fs)
    n_fr = ex.shape[0]
    keep = np.sum(ex ** 2, axis=1) > ENERGY_FLOOR
    if not np.any(keep):
        raise ValueError("reference is silent")
    ti = np.zeros((n_fr, N_BANDS))
    W = np.zeros((n_fr, N_BANDS))
    for b in range(N_BANDS):
        g = np.sqrt(fb[b])
        ax = np.abs(analytic_signal(np.fft.irfft(Xs * g, nfft)[:n]))
        ay = np.abs(analytic_signal(np.fft.irfft(Ys * g, nfft)[:n]))
        fx, _ = _frames(ax, fs)
        fy, _ = _frames(ay, fs)
        cx = fx - fx.mean(axis=1, keepdims=True)
        cy = fy - fy.mean(axis=1, keepdims=True)
        den = np.sqrt(np.sum(cx ** 2, axis=1) * np.sum(cy ** 2, axis=1))
        r = np.where(den > 0, np.sum(cx * cy, axis=1) / np.where(den > 0, den, 1.0), 0.0)
        r2 = np.clip(r ** 2, 0, 1)
        with np.errstate(divide="ignore"):
            snr = 10 * np.log10(r2 / (1 - r2))
        snr = np.clip(np.nan_to_num(snr, nan=NCM_SNR_MAX, posinf=NCM_SNR_MAX, neginf=NCM_SNR_MIN),
                      NCM_SNR_MIN, NCM_SNR_MAX)
        ti[:, b] = (snr - NCM_SNR_MIN) / (NCM_SNR_MAX - NCM_SNR_MIN)
        W[:, b] = np.sqrt(np.mean(fx ** 2, axis=1)) ** BAND_WEIGHT_POWER
    ti, W = ti[keep], W[keep]
    ws = W.sum(axis=1)
    ok = ws > 0
    return float(np.mean(np.sum(W[ok] * ti[ok], axis=1) / ws[ok]))


def band_weighted_suite(ref, test) -> dict:
    return {"fwsnrseg": fwsnrseg(ref, test), "wss": wss(ref, test), "ncm": ncm(ref, test)}


def _autocorr(frames, order):
    n = frames.shape[1]
    nfft = next_pow2(2 * n)
    S = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2
    return np.fft.irfft(S, nfft, axis=1)[:, :order + 1]


def lpc(r: np.ndarray):
    """Prediction polynomial ``[1, -a1, ...]`` and error power from autocorrelation ``r``.

    Returns ``None`` when the normal equations are singular or the filter is unstable.
    """
    p = r.size - 1
    if r[0] <= 0:
        return None
    try:
        a = solve_toeplitz(r[:p], r[1:])
    except np.linalg.LinAlgError:
        return None
    poly = np.concatenate([[1.0], -a])
    err = float(r[0] - a @ r[1:])
    if not err > 0 or not np.all(np.isfinite(poly)) or np.any(np.abs(np.roots(poly)) >= 1):
        return None
    return poly, err


def _lpc_pairs(ref, test, order=LPC_ORDER):
    x, y, fs = _align(ref, test)
    fx, L = _frames(x, fs)
    fy, _ = _frames(y, fs)
    w = hann(L)
    rx = _autocorr(fx * w, order)
    ry = _autocorr(fy * w, order)
    out, skipped = [], 0
    for j in range(rx.shape[0]):
        if rx[j, 0] <= ENERGY_FLOOR:
            continue                            # silent reference frame: not an LPC failure
        px, py = lpc(rx[j]), lpc(ry[j])
        if px is None or py is None:
            skipped += 1
            continue
        R = toeplitz(rx[j])
        out.append((px[0], py[0], R, px[1], py[1]))
    return out, skipped


def llr(ref, test) -> float:
    pairs, _ = _lpc_pairs(ref, test)
    if not pairs:
        raise ValueError("no usable LPC frames")
    vals = [np.log((ay @ R @ ay) / (ax @ R @ ax)) for ax, ay, R, _, _ in pairs]
    return float(np.mean(np.clip(vals, 0.0, 1.0)))


def itakura_saito(ref, test) -> float:
    """Itakura-Saito distance from LPC models (asymmetric; the reference sets ``R``)."""
    pairs, _ = _lpc_pairs(ref, test)
    if not pairs:
        raise ValueError("no usable LPC frames")
    vals = []
    for ax, ay, R, gx, gy in pairs:
        vals.append(gx / gy * (ay @ R @ ay) / (ax @ R @ ax) + np.log(gy / gx) - 1)
    return float(max(np.mean(vals), 0.0))


def lsd(ref, test) -> float:
    """Log-spectral distance (dB): RMS over frequency per frame, then the frame mean."""
    x, y, fs = _align(ref, test)
    fx, L = _frames(x, fs)
    fy, _ = _frames(y, fs)
    keep = np.sum(fx ** 2, axis=1) > ENERGY_FLOOR
    if not np.any(keep):
        raise ValueError("reference is silent")
    nfft = next_pow2(L)
    w = hann(L)
    Px = np.abs(np.fft.rfft(fx[keep] * w, nfft, axis=1)) ** 2
    Py = np.abs(np.fft.rfft(fy[keep] * w, nfft, axis=1)) ** 2
    d = 10 * np.log10(np.maximum(Px, 1e-12)) - 10 * np.log10(np.maximum(Py, 1e-12))
    return float(np.mean(np.sqrt(np.mean(d ** 2, axis=1))))


def mcd(ref, test, order: int = 24, alpha: float = 0.42) -> float:
    """Mel-cepstral distortion (dB) over coefficients ``1..order`` (``c0`` excluded)."""
    x, y, fs = _align(ref, test)
    wx, wy = Waveform(x, fs), Waveform(y, fs)
    grid = FrameGrid.for_waveform(wx, 0.005, FRAME_S)
    cx = mgc_analyze(wx, grid, order, alpha).coeffs
    cy = mgc_analyze(wy, grid, order, alpha).coeffs
    return mcd_from_coeffs(cx, cy)


def mcd_from_coeffs(cx, cy) -> float:
    cx, cy = np.atleast_2d(cx), np.atleast_2d(cy)
    if cx.shape != cy.shape:
        raise ValueError("coefficient arrays must have the same shape")
    d = cx[:, 1:] - cy[:, 1:]
    return float(MCD_SCALE * np.mean(np.sqrt(np.sum(d ** 2, axis=1))))


def spectral_distance_suite(ref, test) -> dict:
    return {"llr": llr(ref, test), "is_dist": itakura_saito(ref, test), "lsd": lsd(ref, test),
            "mcd": mcd(ref, test)}


def corr(ref, test) -> float:
    x = np.asarray(getattr(ref, "samples", ref), float).ravel()
    y = np.asarray(getattr(test, "samples", test), float).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("inputs must have equal length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt(np.sum(dx ** 2) * np.sum(dy ** 2))
    if den == 0:
        raise ValueError("degenerate input")
    return float(np.clip(np.sum(dx * dy) / den, -1.0, 1.0))


def evaluate(ref, test) -> MetricReport:
    x, y, fs = _align(ref, test)
    r, t = Waveform(x, fs), Waveform(y, fs)
    _, skipped = _lpc_pairs(r, t)
    return MetricReport(fwsnrseg(r, t), ncm(r, t), wss(r, t), llr(r, t), itakura_saito(r, t),
                        lsd(r, t), mcd(r, t), corr(x, y), skipped)
