"""Synthetic signals with known ground truth, used for benchmarking and tests."""
from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .signal_core import Waveform

FS = 16000

# (centre Hz, bandwidth Hz) for a handful of vowel-like configurations
VOWEL_FORMANTS = {
    "a": ((730, 90), (1090, 110), (2440, 170), (3400, 250), (4200, 300)),
    "i": ((270, 60), (2290, 100), (3010, 150), (3700, 250), (4500, 300)),
    "u": ((300, 60), (870, 90), (2240, 150), (3300, 250), (4300, 300)),
    "e": ((530, 70), (1840, 100), (2480, 160), (3500, 250), (4400, 300)),
    "o": ((570, 80), (840, 90), (2410, 160), (3400, 250), (4300, 300)),
}


def _f0_samples(f0, n, fs):
    """Per-sample F0 from a constant, an array, or a callable of time."""
    if callable(f0):
        return np.asarray(f0(np.arange(n) / fs), float)
    f0 = np.asarray(f0, float)
    if f0.ndim == 0:
        return np.full(n, float(f0))
    if f0.size != n:
        raise ValueError("per-sample f0 must match the signal length")
    return f0


def tone(freq, duration=1.0, fs=FS, amp=0.5, phase=0.0) -> Waveform:
    t = np.arange(int(round(duration * fs))) / fs
    return Waveform(amp * np.cos(2 * np.pi * freq * t + phase), fs)


def harmonic(f0, duration=1.0, fs=FS, n_harmonics=None, fmax=None, amps=None,
             amp=0.5, phases=None) -> Waveform:
    """Sum of harmonics following ``f0`` (constant, array or callable).

    Harmonics above ``fmax`` (default Nyquist) are muted sample by sample, so
    glides never alias. Default amplitudes fall off as ``1/k`` (sawtooth-like).
    """
    n = int(round(duration * fs))
    f = _f0_samples(f0, n, fs)
    fmax = fs / 2 if fmax is None else fmax
    if n_harmonics is None:
        n_harmonics = int(fmax / max(f.min(), 1.0))
    phase = 2 * np.pi * np.cumsum(f) / fs
    x = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        a = 1.0 / k if amps is None else amps[k - 1]
        p0 = 0.0 if phases is None else phases[k - 1]
        x += np.where(k * f < fmax, a, 0.0) * np.sin(k * phase + p0)
    x *= amp / max(np.max(np.abs(x)), 1e-12)
    return Waveform(x, fs)


def sawtooth(f0, duration=1.0, fs=FS, amp=0.5) -> Waveform:
    """Band-limited sawtooth."""
    return harmonic(f0, duration, fs, amp=amp)


def pulse_train(f0, duration=1.0, fs=FS, amp=1.0, offset=0) -> Waveform:
    """Unit impulses at integer multiples of the period (period rounded to samples)."""
    n = int(round(duration * fs))
    period = int(round(fs / f0))
    x = np.zeros(n)
    x[offset::period] = amp
    return Waveform(x, fs)


def resonator(x, freq, bw, fs=FS):
    """Two-pole resonance normalised to unit gain at DC."""
    r = np.exp(-np.pi * bw / fs)
    c = 2 * r * np.cos(2 * np.pi * freq / fs)
    a = [1.0, -c, r * r]
    return lfilter([sum(a)], a, x)


def glottal_pulses(f0, n, fs=FS, open_quotient=0.6):
    """Rosenberg-like glottal flow derivative train following a per-sample F0."""
    f = _f0_samples(f0, n, fs)
    phase = np.cumsum(f) / fs
    frac = phase - np.floor(phase)
    oq = open_quotient
    tp = 0.7 * oq
    flow = np.where(frac < tp, 0.5 * (1 - np.cos(np.pi * frac / tp)),
                    np.where(frac < oq, np.cos(0.5 * np.pi * (frac - tp) / (oq - tp)), 0.0))
    return np.diff(flow, prepend=flow[0])


def vowel(f0=120.0, duration=1.0, fs=FS, formants="a", noise=0.0, seed=0,
          amp=0.5, noise_mod=0.0) -> Waveform:
    """Glottal pulse train through a cascade of formant resonators.

    ``formants`` is a key of :data:`VOWEL_FORMANTS` or a list of ``(freq, bw)``.
    ``noise`` sets an aspiration-noise level relative to the voiced RMS;
    ``noise_mod`` in [0, 1] amplitude-modulates it with the glottal flow so the
    noise bursts line up with the open phase.
    """
    n = int(round(duration * fs))
    spec = VOWEL_FORMANTS[formants] if isinstance(formants, str) else formants
    x = glottal_pulses(f0, n, fs)
    if noise > 0:
        rng = np.random.default_rng(seed)
        e = rng.standard_normal(n)
        if noise_mod > 0:
            flow = np.cumsum(x)
            flow = (flow - flow.min()) / max(np.ptp(flow), 1e-12)
            e *= 1 - noise_mod + noise_mod * flow
        x = x + noise * np.std(x) * e / np.std(e)
    for freq, bw in spec:
        if freq < fs / 2:
            x = resonator(x, freq, bw, fs)
    # lip radiation
    x = np.diff(x, prepend=0.0)
    x *= amp / max(np.max(np.abs(x)), 1e-12)
    return Waveform(x, fs)


def f0_at_frames(f0, num_frames, frame_shift=0.005, fs=FS):
    """Ground-truth F0 evaluated at frame centres."""
    t = np.arange(num_frames) * frame_shift
    if callable(f0):
        return np.asarray(f0(t), float)
    f0 = np.asarray(f0, float)
    if f0.ndim == 0:
        return np.full(num_frames, float(f0))
    idx = np.minimum(np.round(t * fs).astype(int), f0.size - 1)
    return f0[idx]


def glide(f_start, f_end, duration=1.0):
    """Linear F0 glide as a callable of time."""
    return lambda t: f_start + (f_end - f_start) * np.clip(np.asarray(t) / duration, 0, 1)


def vibrato(centre=150.0, depth=10.0, rate=5.0):
    return lambda t: centre + depth * np.sin(2 * np.pi * rate * np.asarray(t))
