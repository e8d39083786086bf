"""Phase distortion deviation, the continuous noise mask, and distribution diagnostics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal_core import FrameGrid, ParamTrack, TrackKind, Waveform, extract_segments, hann

SIGMA_MAX = 10.0
DEFAULT_THRESHOLD = 0.77


@dataclass(frozen=True)
class PddMap:
    values: np.ndarray      # (frames, bands)
    bands: np.ndarray       # band centres, Hz
    grid: FrameGrid

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (self.grid.num_frames, np.asarray(self.bands).size):
            raise ValueError("values must be frames x bands")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("PDD values must be finite and non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bands", np.asarray(self.bands, float))


@dataclass(frozen=True)
class CnmTrack:
    values: np.ndarray
    grid: FrameGrid
    threshold: float = DEFAULT_THRESHOLD
    degenerate: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("cNM values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def as_track(self) -> ParamTrack:
        return ParamTrack(self.values, self.grid, TrackKind.CNM)


def circular_deviation(pd, axis=-1) -> np.ndarray:
    """``sqrt(-2 log |mean exp(j (pd - mu))|)`` with ``mu`` the circular mean; capped at 10."""
    z = np.exp(1j * np.asarray(pd, float))
    m = z.mean(axis=axis, keepdims=True)
    mu = np.angle(m)
    r = np.abs(np.mean(z * np.exp(-1j * mu), axis=axis))
    with np.errstate(divide="ignore"):
        s = np.sqrt(np.maximum(-2 * np.log(np.minimum(r, 1.0)), 0.0))
    return np.minimum(s, SIGMA_MAX)


def harmonic_phases(w: Waveform, f0: ParamTrack, n_harm: int, periods: float = 3.0):
    """Phase of harmonics ``1..n_harm`` per frame, referenced to the frame centre.

    Harmonics at or above Nyquist come back as NaN.
    """
    fs = w.sample_rate
    f = np.asarray(f0.values, float)
    centres = np.round(f0.grid.times() * fs).astype(int)
    out = np.full((f.size, n_harm), np.nan)
    for t, (c, fv) in enumerate(zip(centres, f)):
        L = max(int(round(periods * fs / fv)), 8) | 1
        seg = extract_segments(w.samples, [c], L)[0] * hann(L + 2)[1:-1]
        n = np.arange(L) - L // 2
        k = np.arange(1, n_harm + 1)
        ok = k * fv < fs / 2
        E = np.exp(-2j * np.pi * np.outer(k[ok] * fv / fs, n))
        out[t, ok] = np.angle(E @ seg)
    return out


def compute_pdd(w: Waveform, f0: ParamTrack, N: int = 5, bands=None, mvf: ParamTrack | None = None,
                high_band_only: bool = False) -> PddMap:
    """Phase distortion deviation map (frames x bands).

    The phase distortion at harmonic ``h`` is ``phi[h+1] - phi[h] - phi[1]``,
    which cancels the linear-phase term of the frame position. Each band takes
    the nearest harmonic below it; the deviation is taken over ``N`` frames
    centred on the current one.
    """
    if N < 3 or N % 2 == 0:
        raise ValueError("N must be odd and >= 3")
    fs = w.sample_rate
    if bands is None:
        bands = np.arange(100.0, fs / 2, 100.0)
    bands = np.asarray(bands, float)
    f = np.asarray(f0.values, float)
    n_harm = int(np.ceil(bands.max() / f.min())) + 2
    phi = harmonic_phases(w, f0, n_harm)
    pd = phi[:, 1:] - phi[:, :-1] - phi[:, :1]       # index h-1 -> harmonic h
    # nearest harmonic (h >= 1) for each band, per frame
    h = np.clip(np.round(bands[None, :] / f[:, None]).astype(int), 1, n_harm - 1)
    pd_b = np.take_along_axis(pd, h - 1, axis=1)
    n_frames = f.size
    half = N // 2
    sig = np.zeros_like(pd_b)
    for t in range(n_frames):
        blk = pd_b[max(t - half, 0):t + half + 1]
        s = circular_deviation(np.nan_to_num(blk), axis=0)
        s[np.any(np.isnan(blk), axis=0)] = 0.0
        sig[t] = s
    if high_band_only and mvf is not None:
        sig[bands[None, :] < np.asarray(mvf.values)[:, None]] = 0.0
    return PddMap(sig, bands, f0.grid)


def compute_cnm(pdd: PddMap, mvf: ParamTrack | None = None, target_len: int | None = None,
                threshold: float = DEFAULT_THRESHOLD, polarity: str = "literal") -> CnmTrack:
    """Per-frame mask ``1 - normalised PDD`` (``polarity="inverted"`` gives the normalised PDD).

    Each frame is summarised by its mean deviation over bands above the MVF
    (all bands when no MVF is given or none lie above it), min-max normalised
    over the utterance and resampled to ``target_len`` frames by nearest index.
    """
    v = pdd.values
    if v.size == 0:
        raise ValueError("empty PDD map")
    if mvf is not None:
        above = pdd.bands[None, :] >= np.asarray(mvf.values)[:, None]
        cnt = above.sum(axis=1)
        summ = np.where(cnt > 0, (v * above).sum(axis=1) / np.maximum(cnt, 1), v.mean(axis=1))
    else:
        summ = v.mean(axis=1)
    lo, hi = summ.min(), summ.max()
    degenerate = not hi > lo
    if degenerate:
        warnings.warn("constant PDD summary; cNM set to 0.5", RuntimeWarning)
        norm = np.full(summ.size, 0.5)
    else:
        norm = (summ - lo) / (hi - lo)
    n = summ.size if target_len is None else int(target_len)
    if n < 1:
        raise ValueError("target_len must be >= 1")
    norm = norm[np.minimum(np.floor(np.arange(n) * summ.size / n).astype(int), summ.size - 1)]
    if polarity == "literal":
        vals = 1.0 - norm
    elif polarity == "inverted":
        vals = norm
    else:
        raise ValueError(f"unknown polarity {polarity!r}")
    grid = pdd.grid if n == summ.size else FrameGrid(
        pdd.grid.frame_shift * summ.size / n,
        max(pdd.grid.frame_length, pdd.grid.frame_shift * summ.size / n), n)
    return CnmTrack(vals, grid, threshold, degenerate)


def apply_cnm(voiced, unvoiced, cnm, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Gate voiced frames (kept where cNM <= threshold) and scale unvoiced ones by cNM; return their sum.

    ``voiced``/``unvoiced`` are frame matrices (one row per cNM value) or
    sample vectors with a per-sample ``cnm``.
    """
    v = np.asarray(voiced, float)
    u = np.asarray(unvoiced, float)
    if v.shape != u.shape:
        raise ValueError("voiced and unvoiced parts must have the same shape")
    c = np.asarray(getattr(cnm, "values", cnm), float)
    if c.shape[0] != v.shape[0]:
        raise ValueError("cNM length must match the number of frames")
    c = c.reshape((-1,) + (1,) * (v.ndim - 1))
    return np.where(c <= threshold, v, 0.0) + u * c


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, float)
    return float((4 / 3) ** 0.2 * np.std(x, ddof=1) * x.size ** (-1 / 5)) if x.size > 1 else 0.0


def kernel_density(samples, h: float | None = None, grid=None, n_grid: int = 1024,
                   max_grid: int = 1 << 20):
    """Gaussian kernel density estimate; returns ``(grid, density)``.

    The default grid spans five bandwidths beyond the data with at least
    ``n_grid`` points and a step no coarser than ``h / 4`` (up to ``max_grid``
    points), so the estimate integrates to one on it.
    """
    x = np.asarray(samples, float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if h is None:
        h = silverman_bandwidth(x)
        scale = max(float(np.abs(x).max()), 1.0)
        # a spread at rounding level is a constant sample
        if h <= 1e-9 * scale:
            h = 1e-3 * scale
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        lo, hi = x.min() - 5 * h, x.max() + 5 * h
        n = int(min(max(n_grid, np.ceil(4 * (hi - lo) / h) + 1), max_grid))
        grid = np.linspace(lo, hi, n)
    grid = np.asarray(grid, float)
    dens = np.zeros(grid.size)
    # chunk over samples to bound memory
    step = max(1, int(4_000_000 // max(grid.size, 1)))
    for i in range(0, x.size, step):
        z = (grid[:, None] - x[None, i:i + step]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return grid, dens


def ecdf(samples):
    """Right-continuous empirical CDF as a vectorised callable."""
    x = np.sort(np.asarray(samples, float).ravel())
    if x.size == 0:
        raise ValueError("need at least one sample")
    n = x.size

    def F(q):
        return np.searchsorted(x, np.asarray(q, float), side="right") / n
    return F


def save_pddmap(path, pdd: PddMap) -> None:
    """Text header followed by a little-endian float32 frames x bands matrix."""
    header = (f"PDDMAP1\nframes {pdd.values.shape[0]}\nbands {pdd.values.shape[1]}\n"
              f"frame_shift {pdd.grid.frame_shift!r}\n"
              f"band_hz {' '.join(repr(float(b)) for b in pdd.bands)}\nend\n")
    with open(Path(path), "wb") as f:
        f.write(header.encode("ascii"))
        f.write(pdd.values.astype("<f4").tobytes())


def load_pddmap(path) -> PddMap:
    data = Path(path).read_bytes()
    end = data.index(b"\nend\n") + 5
    lines = data[:end].decode("ascii").splitlines()
    if lines[0] != "PDDMAP1":
        raise ValueError("not a PDD map file")
    kv = dict(line.split(" ", 1) for line in lines[1:-1])
    nf, nb = int(kv["frames"]), int(kv["bands"])
    vals = np.frombuffer(data[end:], dtype="<f4").astype(float).reshape(nf, nb)
    shift = float(kv["frame_shift"])
    bands = np.array([float(b) for b in kv["band_hz"].split()])
    return PddMap(vals, bands, FrameGrid(shift, shift, nf))
