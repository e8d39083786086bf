"""Continuous vocoder toolkit: continuous-parameter analysis, two synthesis back-ends,
objective quality metrics and voice-conversion signal utilities."""

import os as _os

# CVOC_THREADS caps the BLAS/FFT worker pools; it has to be set before numpy loads
if _os.environ.get("CVOC_THREADS", "").isdigit() and int(_os.environ["CVOC_THREADS"]) > 0:
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_v, _os.environ["CVOC_THREADS"])

from .signal_core import FrameGrid, ParamTrack, TrackKind, Waveform, WindowKind

__version__ = "0.1.0"

__all__ = ["FrameGrid", "ParamTrack", "TrackKind", "Waveform", "WindowKind", "__version__"]
