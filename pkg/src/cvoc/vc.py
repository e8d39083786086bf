"""Voice-conversion utilities: DTW alignment of feature sequences and geometric spectral subtraction."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .signal_core import Waveform, hann, next_pow2


@dataclass(frozen=True)
class WarpPath:
    pairs: np.ndarray           # (K, 2) index pairs (i, j)

    def __post_init__(self):
        p = np.asarray(self.pairs, int).reshape(-1, 2)
        if p.shape[0] == 0:
            raise ValueError("empty path")
        if np.any(p[0] != 0) or np.any(np.diff(p, axis=0) < 0):
            raise ValueError("path must start at (0, 0) and be monotone")
        object.__setattr__(self, "pairs", p)

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def shape(self):
        return tuple(self.pairs[-1] + 1)

    def transposed(self) -> "WarpPath":
        return WarpPath(self.pairs[:, ::-1])

    def to_text(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.pairs)


def dtw_align(X, Y, metric: str = "euclidean"):
    """Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).

    Returns ``(WarpPath, total distance)``; the distance is the sum of local
    costs along the path. Ties prefer the diagonal step.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("sequences must be non-empty")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"feature dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = cdist(X, Y, metric=metric)
    I, J = d.shape
    D = np.full((I + 1, J + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, I + 1):
        row, prev = D[i], D[i - 1]
        # diagonal and vertical moves are vectorised; the horizontal one is a running recursion
        best = np.minimum(prev[:-1], prev[1:]) + d[i - 1]
        for j in range(1, J + 1):
            row[j] = min(best[j - 1], row[j - 1] + d[i - 1, j - 1])
    i, j = I, J
    path = [(I - 1, J - 1)]
    while (i, j) != (1, 1):
        cands = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        _, i, j = min(cands, key=lambda c: c[0])
        path.append((i - 1, j - 1))
    return WarpPath(np.array(path[::-1])), float(D[I, J])


def apply_path(X, Y, path: WarpPath):
    """Joint sequence ``(X[i_k], Y[j_k])`` of equal length along the path."""
    X, Y = np.asarray(X), np.asarray(Y)
    return X[path.pairs[:, 0]], Y[path.pairs[:, 1]]


# ---------------------------------------------------------------- GA-SS

PRIOR_SMOOTHING = 0.98
XI_MIN = 10 ** (-25 / 10)


def ga_gain(gamma, xi, clamp: bool = True) -> np.ndarray:
    """Geometric-approach gain from a-posteriori (``gamma``) and a-priori (``xi``) SNRs.

    The two cross-phase cosines follow from the triangle formed by the noisy,
    clean and noise phasors. When the SNR pair describes no real triangle the
    ratio under the root is not positive; the gain then falls back to the
    magnitude ratio ``sqrt(xi / gamma)`` that the sine rule gives for a
    consistent triangle. The result is real and non-negative, optionally
    capped at one.
    """
    gamma = np.maximum(np.asarray(gamma, float), 1e-12)
    xi = np.maximum(np.asarray(xi, float), 1e-12)
    num = 1 - (gamma + 1 - xi) ** 2 / (4 * gamma)
    den = 1 - (gamma - 1 - xi) ** 2 / (4 * xi)
    ok = (num > 0) & (den > 0)
    h = np.where(ok, np.sqrt(np.where(ok, num, 0.0) / np.where(ok, den, 1.0)), np.sqrt(xi / gamma))
    return np.minimum(h, 1.0) if clamp else h


def gass_enhance(noisy: Waveform, noise_frames: int = 3, frame_s: float = 0.020,
                 clamp: bool = True) -> Waveform:
    """Geometric spectral subtraction with the noise spectrum taken from the leading frames.

    Square-root Hann analysis and synthesis windows at 50 % overlap give exact
    reconstruction when every gain is one. The a-priori SNR is decision-directed.
    """
    x = np.asarray(noisy.samples, float)
    fs = noisy.sample_rate
    L = 2 * max(int(round(frame_s * fs)) // 2, 2)
    hop = L // 2
    nfft = next_pow2(L)
    n = x.size
    n_frames = int(np.ceil((n + L) / hop)) + 1
    if n_frames < noise_frames + 1:
        raise ValueError("signal too short for the noise estimate")
    win = np.sqrt(hann(L, periodic=True))
    xp = np.concatenate([np.zeros(hop), x, np.zeros(n_frames * hop + L)])
    idx = np.arange(L)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * win
    Y = np.fft.rfft(frames, nfft, axis=1)
    P = np.abs(Y) ** 2
    # the first frame only sees half a window of signal; start the estimate at frame 1
    lam = P[1:1 + noise_frames].mean(axis=0)
    silent = lam <= 0
    lam_safe = np.where(silent, 1.0, lam)
    out = np.zeros_like(Y)
    prev_clean = None
    for m in range(n_frames):
        gamma = P[m] / lam_safe
        if prev_clean is None:
            xi = PRIOR_SMOOTHING + (1 - PRIOR_SMOOTHING) * np.maximum(gamma - 1, 0)
        else:
            xi = PRIOR_SMOOTHING * prev_clean / lam_safe + (1 - PRIOR_SMOOTHING) * np.maximum(gamma - 1, 0)
        xi = np.maximum(xi, XI_MIN)
        h = ga_gain(gamma, xi, clamp)
        h = np.where(silent, 1.0, h)
        out[m] = h * Y[m]                       # noisy phase kept
        prev_clean = np.abs(out[m]) ** 2
    rec = np.fft.irfft(out, nfft, axis=1)[:, :L] * win
    y = np.zeros(xp.size)
    for m in range(n_frames):
        y[m * hop:m * hop + L] += rec[m]
    return Waveform(y[hop:hop + n], fs)


# ---------------------------------------------------------------- pipeline

FrameMapping = Callable[[np.ndarray], np.ndarray]


def identity_mapping(features: np.ndarray) -> np.ndarray:
    return features


def bundle_features(b) -> np.ndarray:
    """Frame matrix ``[log contF0, log MVF, mgc...]`` of an analysis bundle."""
    return np.column_stack([np.log(b.contf0.values), np.log(b.mvf.values), b.mgc.coeffs])


def features_to_bundle(b, feats: np.ndarray):
    feats = np.asarray(feats, float)
    if feats.shape != (len(b.contf0), b.mgc.order + 3):
        raise ValueError("feature matrix does not match the bundle layout")
    return dataclasses.replace(b, contf0=b.contf0.replace(np.exp(feats[:, 0])),
                               mvf=b.mvf.replace(np.exp(feats[:, 1])),
                               mgc=b.mgc.replace(feats[:, 2:]))


def align_bundles(a, b, metric: str = "euclidean"):
    """DTW over the MGC streams of two bundles (``c0`` excluded so loudness does not drive the path)."""
    return dtw_align(a.mgc.coeffs[:, 1:], b.mgc.coeffs[:, 1:], metric)


def convert(source, mapping: FrameMapping = identity_mapping, enhance: bool = True, seed: int = 0) -> Waveform:
    """Map source features frame by frame, resynthesise with the sinusoidal model, optionally enhance."""
    from .synthesis import synth_csm
    mapped = features_to_bundle(source, mapping(bundle_features(source)))
    y = synth_csm(mapped, seed=seed)
    return gass_enhance(y) if enhance else y
