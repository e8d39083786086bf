"""Signal containers, framing, windows, analytic signal and track resampling."""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

DEFAULT_SHIFT = 0.005
DEFAULT_FRAME_LENGTH = 0.025

# Four-term cosine windows written in centred form: w(x) = sum a_m cos(m*pi*x), x in [-1, 1].
NUTTALL_COEFS = (0.338946, 0.481973, 0.161054, 0.018027)
BLACKMAN_COEFS = (0.42, 0.5, 0.08)


class TrackKind(str, Enum):
    CONTF0 = "contF0"
    MVF = "MVF"
    HNR = "HNR"
    CNM = "cNM"
    PDD = "PDD"
    OTHER = "other"


@dataclass(frozen=True)
class Waveform:
    """Mono signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def normalized(self, peak: float = 1.0) -> "Waveform":
        m = np.max(np.abs(self.samples)) if self.samples.size else 0.0
        if m == 0:
            return self
        return Waveform(self.samples * (peak / m), self.sample_rate)


@dataclass(frozen=True)
class FrameGrid:
    """Uniform analysis grid; frame ``n`` is centred at ``n * frame_shift`` seconds."""

    frame_shift: float = DEFAULT_SHIFT
    frame_length: float = DEFAULT_FRAME_LENGTH
    num_frames: int = 0

    def __post_init__(self):
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")
        if self.frame_length < self.frame_shift:
            raise ValueError("frame_length must be >= frame_shift")
        if self.num_frames < 0:
            raise ValueError("num_frames must be non-negative")

    @classmethod
    def for_waveform(cls, w: Waveform, frame_shift=DEFAULT_SHIFT,
                     frame_length=DEFAULT_FRAME_LENGTH) -> "FrameGrid":
        # small tolerance so that 1.0 s / 5 ms gives 200, not 201
        n = math.ceil(w.duration / frame_shift - 1e-9)
        return cls(frame_shift, max(frame_length, frame_shift), max(n, 0))

    def times(self) -> np.ndarray:
        return np.arange(self.num_frames) * self.frame_shift

    def hop(self, sample_rate: int) -> int:
        return int(round(self.frame_shift * sample_rate))

    def with_length(self, frame_length: float) -> "FrameGrid":
        return FrameGrid(self.frame_shift, max(frame_length, self.frame_shift), self.num_frames)


@dataclass(frozen=True)
class ParamTrack:
    """Per-frame scalar parameter stream."""

    values: np.ndarray
    grid: FrameGrid
    kind: TrackKind = TrackKind.OTHER

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.num_frames:
            raise ValueError(
                f"track has {v.size} values but grid has {self.grid.num_frames} frames")
        if not np.all(np.isfinite(v)):
            raise ValueError("track values must be finite")
        kind = TrackKind(self.kind)
        if kind in (TrackKind.CONTF0, TrackKind.MVF) and np.any(v <= 0):
            raise ValueError(f"{kind.value} track must be strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", kind)

    def __len__(self):
        return self.values.size

    def replace(self, values) -> "ParamTrack":
        return ParamTrack(values, self.grid, self.kind)


class WindowKind(str, Enum):
    RECTANGULAR = "rectangular"
    HANNING = "hanning"
    BLACKMAN = "blackman"
    NUTTALL = "nuttall"


def _centred_axis(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def cosine_sum(x, coefs) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return sum(a * np.cos(m * np.pi * x) for m, a in enumerate(coefs))


def nuttall(n: int) -> np.ndarray:
    """Symmetric four-term Nuttall window, 1 at the centre and 0 at both ends."""
    return cosine_sum(_centred_axis(n), NUTTALL_COEFS)


def blackman(n: int) -> np.ndarray:
    return cosine_sum(_centred_axis(n), BLACKMAN_COEFS)


def hann(n: int, periodic: bool = False) -> np.ndarray:
    if periodic:
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    return np.hanning(n)


def get_window(kind, n: int) -> np.ndarray:
    kind = WindowKind(kind)
    if kind is WindowKind.RECTANGULAR:
        return np.ones(n)
    if kind is WindowKind.HANNING:
        return hann(n)
    if kind is WindowKind.BLACKMAN:
        return blackman(n)
    return nuttall(n)


def next_pow2(n: int) -> int:
    return 1 << max(int(math.ceil(math.log2(max(n, 1)))), 0)


def fft_size(frame_len: int, peak_accuracy: bool = False) -> int:
    """FFT length for a frame; 4x oversampled when peak positions matter."""
    return next_pow2(4 * frame_len if peak_accuracy else frame_len)


def extract_segments(x: np.ndarray, centres, length: int) -> np.ndarray:
    """Gather ``length``-sample segments centred on ``centres`` (zero-padded)."""
    centres = np.asarray(centres, dtype=int)
    half = length // 2
    pad = length + 1
    xp = np.concatenate([np.zeros(pad), np.asarray(x, float), np.zeros(pad)])
    idx = centres[:, None] - half + np.arange(length)[None, :] + pad
    idx = np.clip(idx, 0, xp.size - 1)
    return xp[idx]


def frame_signal(w: Waveform, grid: FrameGrid, window=WindowKind.HANNING) -> np.ndarray:
    """Split ``w`` into centred, windowed frames, one row per grid frame."""
    if len(w) == 0:
        raise ValueError("empty input")
    length = max(int(round(grid.frame_length * w.sample_rate)), 1)
    centres = np.round(grid.times() * w.sample_rate).astype(int)
    frames = extract_segments(w.samples, centres, length)
    return frames * get_window(window, length)[None, :]


def overlap_add(frames: np.ndarray, hop: int, n_out: int, first_start: int = 0) -> np.ndarray:
    """Sum rows of ``frames`` placed every ``hop`` samples, starting at ``first_start``."""
    frames = np.atleast_2d(frames)
    length = frames.shape[1]
    out = np.zeros(n_out + 2 * length + abs(first_start) + hop * frames.shape[0])
    offset = length + abs(first_start)
    for m, fr in enumerate(frames):
        s = offset + first_start + m * hop
        out[s:s + length] += fr
    return out[offset:offset + n_out]


def analytic_signal(frame) -> np.ndarray:
    """``v + j*H{v}`` from the one-sided spectrum."""
    v = np.asarray(frame, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("frame length must be >= 2")
    spec = np.fft.fft(v)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    z = np.fft.ifft(spec * h)
    return v + 1j * z.imag


def normalized_autocorr(frames: np.ndarray, window: np.ndarray, max_lag: int) -> np.ndarray:
    """Window-corrected normalised autocorrelation of windowed frames.

    Rows of ``frames`` must already be windowed by ``window``. Dividing by the
    window's own autocorrelation removes the taper bias, so a periodic frame
    scores close to 1 at its period.
    """
    frames = np.atleast_2d(frames)
    n = frames.shape[1]
    nfft = next_pow2(2 * n)
    spec = np.fft.rfft(frames, nfft, axis=1)
    r = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, :max_lag + 1]
    rw = np.fft.irfft(np.abs(np.fft.rfft(window, nfft)) ** 2, nfft)[:max_lag + 1]
    r0 = r[:, :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (r / np.where(r0 > 0, r0, 1.0)) / (rw / rw[0])
    out[r0[:, 0] <= 0] = 0.0
    return out


def parabolic_peak(y: np.ndarray, i: int):
    """Sub-sample location and height of the peak of ``y`` near index ``i``."""
    if i <= 0 or i >= y.size - 1:
        return float(i), float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    if den >= 0:
        return float(i), float(b)
    d = 0.5 * (a - c) / den
    return i + d, b - 0.25 * (a - c) * d


def resample_track(t: ParamTrack, target_len: int, mode: str = "nearest") -> ParamTrack:
    """Resample a track to ``target_len`` frames, keeping its total duration."""
    if len(t) == 0:
        raise ValueError("empty track")
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    n = len(t)
    if mode == "nearest":
        idx = np.floor(np.arange(target_len) * n / target_len).astype(int)
        vals = t.values[np.minimum(idx, n - 1)]
    elif mode == "linear":
        if target_len == 1:
            vals = t.values[:1].copy()
        else:
            vals = np.interp(np.linspace(0, n - 1, target_len), np.arange(n), t.values)
    else:
        raise ValueError(f"unknown resampling mode {mode!r}")
    shift = t.grid.frame_shift * n / target_len
    grid = FrameGrid(shift, max(t.grid.frame_length, shift), target_len)
    return ParamTrack(vals, grid, t.kind)


def track_at_samples(values, frame_shift: float, sample_rate: int, n_samples: int) -> np.ndarray:
    """Linearly interpolate a per-frame sequence onto sample times."""
    values = np.asarray(values, float)
    frame_t = np.arange(values.size) * frame_shift
    return np.interp(np.arange(n_samples) / sample_rate, frame_t, values)


def read_wav(path, normalize: bool = True) -> Waveform:
    """Read a 16-bit PCM mono RIFF file, scaled to peak 1 unless ``normalize`` is off."""
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM is supported")
        if f.getnchannels() != 1:
            raise ValueError("only mono audio is supported")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    x = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    w = Waveform(x, sr)
    return w.normalized() if normalize else w


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM; signals with peak above 1 are scaled down first."""
    x = w.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    pcm = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(Path(path)), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
