"""Temporal envelopes used to shape the noise component of the excitation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .signal_core import analytic_signal


class EnvelopeKind(str, Enum):
    AMPLITUDE = "amplitude"
    HILBERT = "hilbert"
    TRIANGULAR = "triangular"
    TRUE_ENV = "true"
    NONE = "none"


@dataclass(frozen=True)
class TemporalEnvelope:
    values: np.ndarray
    kind: EnvelopeKind
    iterations: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("envelope must be finite and non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", EnvelopeKind(self.kind))

    def __len__(self):
        return self.values.size


def amplitude_envelope(frame, N: int = 10) -> TemporalEnvelope:
    """Moving average of ``|v|`` over ``2N + 1`` samples, zero-padded at the edges."""
    v = np.abs(np.asarray(frame, float))
    k = np.ones(2 * N + 1) / (2 * N + 1)
    return TemporalEnvelope(np.convolve(v, k, mode="same"), EnvelopeKind.AMPLITUDE)


def hilbert_envelope(frame) -> TemporalEnvelope:
    return TemporalEnvelope(np.abs(analytic_signal(frame)), EnvelopeKind.HILBERT)


def triangular_envelope(frame) -> TemporalEnvelope:
    """Unit triangle rising from 0.35 L to a peak at 0.5 L and back to 0 at 0.65 L."""
    L = np.asarray(frame).size
    if L < 4:
        raise ValueError("frame must have at least 4 samples")
    a, b = 0.35 * L, 0.65 * L
    c = 0.5 * (a + b)
    n = np.arange(L)
    return TemporalEnvelope(np.maximum(0.0, 1 - np.abs(n - c) / (c - a)), EnvelopeKind.TRIANGULAR)


def cepstral_upper_envelope(S: np.ndarray, order: int, wf: float = 10.0, tol_db: float = 0.1,
                            max_iter: int = 50):
    """Iterative cepstral smoothing that ends up on top of the log spectrum ``S``.

    Each pass lifts the target to ``C + wf * max(S - C, 0)``; ``wf = 1`` is the
    plain max-update, larger values push harder and converge in fewer passes.
    Returns the smoothed log spectrum and the number of passes.
    """
    S = np.asarray(S, float)
    N = S.size
    tol = tol_db * np.log(10) / 20
    lifter = np.zeros(N)
    lifter[:order + 1] = 1.0
    if order > 0:
        lifter[-order:] = 1.0
    target = S.copy()
    C = S
    for it in range(1, max_iter + 1):
        C = np.fft.fft(np.fft.ifft(target).real * lifter).real
        gap = S - C
        if np.max(gap) < tol:
            return C, it
        target = C + wf * np.maximum(gap, 0.0)
    return C, max_iter


def true_envelope(frame, wf: float = 10.0, max_iter: int = 50, order: int | None = None,
                  tol_db: float = 0.1) -> TemporalEnvelope:
    """Time envelope from the cepstral upper envelope of the frame's magnitude spectrum.

    The smoothed magnitude ``exp(C)`` is recombined with the frame's phase and
    transformed back; the magnitude of the result is the envelope.
    """
    v = np.asarray(frame, float)
    N = v.size
    if N < 8:
        raise ValueError("frame must have at least 8 samples")
    V = np.fft.fft(v)
    mag = np.abs(V)
    if not np.any(mag > 0):
        return TemporalEnvelope(np.zeros(N), EnvelopeKind.TRUE_ENV, 0)
    S = np.log(np.maximum(mag, mag.max() * 1e-5))
    order = max(N // 4, 1) if order is None else order
    C, it = cepstral_upper_envelope(S, order, wf, tol_db, max_iter)
    T = np.abs(np.fft.ifft(np.exp(C) * np.exp(1j * np.angle(V))))
    return TemporalEnvelope(T, EnvelopeKind.TRUE_ENV, it)


_ESTIMATORS = {
    EnvelopeKind.AMPLITUDE: amplitude_envelope,
    EnvelopeKind.HILBERT: hilbert_envelope,
    EnvelopeKind.TRIANGULAR: triangular_envelope,
    EnvelopeKind.TRUE_ENV: true_envelope,
}


def estimate(frame, kind) -> TemporalEnvelope:
    kind = EnvelopeKind(kind)
    if kind is EnvelopeKind.NONE:
        return TemporalEnvelope(np.ones(np.asarray(frame).size), kind)
    return _ESTIMATORS[kind](frame)


def rms_normalized(env: TemporalEnvelope) -> np.ndarray:
    """Envelope scaled to unit RMS so modulated unit-power noise keeps its power."""
    v = env.values
    r = np.sqrt(np.mean(v ** 2)) if v.size else 0.0
    return v / r if r > 0 else np.ones_like(v)


def modulate(noise, env: TemporalEnvelope) -> np.ndarray:
    return np.asarray(noise, float) * rms_normalized(env)
