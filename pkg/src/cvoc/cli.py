"""Command-line front end and the bundle file format.

Bundle layout: an ASCII header of ``key value`` lines opened by the magic
``CVOC1`` and closed by ``end``, followed by the tracks named on the
``tracks`` line as little-endian float32 arrays, in that order.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import wave
import warnings
from pathlib import Path

import numpy as np

from .envelopes import EnvelopeKind
from .excitation import ResidualBasis
from .metrics import evaluate
from .noise_mask import DEFAULT_THRESHOLD, CnmTrack
from .pitch import (PitchConfig, add_noise, contf0_baseline, pitch_error_metrics, refine_akf,
                    refine_stonemask, refine_timewarp)
from .signal_core import FrameGrid, ParamTrack, TrackKind, Waveform, read_wav, write_wav
from .spectral import MgcTrack
from .synthesis import AnalysisBundle, analyze, synth_csm, synth_source_filter
from . import testsignals
from .vc import align_bundles

MAGIC = "CVOC1"
EXIT_OK, EXIT_INPUT, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
BENCH_METHODS = ("baseline", "akf", "timewarp", "stonemask")

log = logging.getLogger("cvoc")


class InputError(Exception):
    pass


class BundleFormatError(Exception):
    pass


# ---------------------------------------------------------------- bundle I/O

def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, float), dtype="<f4")


def write_bundle(path, b: AnalysisBundle) -> None:
    """Serialise a bundle; every array is stored as float32."""
    n = len(b.contf0)
    g = b.grid
    arrays = [("contf0", b.contf0.values), ("mvf", b.mvf.values), ("mgc", b.mgc.coeffs)]
    if b.hnr is not None:
        arrays.append(("hnr", b.hnr.values))
    if b.cnm is not None:
        arrays.append(("cnm", b.cnm.values))
    if b.basis is not None:
        arrays += [("basis", b.basis.eigenvectors), ("basis_eig", b.basis.eigenvalues)]
        if b.basis.mean is not None:
            arrays.append(("basis_mean", b.basis.mean))
    head = [MAGIC,
            f"sample_rate {b.sample_rate}",
            f"frame_shift {g.frame_shift!r}",
            f"frame_length {g.frame_length!r}",
            f"frames {n}",
            f"mgc_order {b.mgc.order}",
            f"alpha {b.mgc.alpha!r}",
            f"envelope {b.envelope_kind.value}"]
    if b.cnm is not None:
        head += [f"cnm_threshold {b.cnm.threshold!r}", f"cnm_degenerate {int(b.cnm.degenerate)}"]
    if b.basis is not None:
        head += [f"basis_shape {b.basis.eigenvectors.shape[0]} {b.basis.length}",
                 f"basis_frames {b.basis.frame_count}"]
    head.append("tracks " + " ".join(f"{k}:{np.asarray(v).size}" for k, v in arrays))
    head.append("end")
    with open(Path(path), "wb") as f:
        f.write(("\n".join(head) + "\n").encode("ascii"))
        for _, v in arrays:
            f.write(_f32(v).tobytes())


def read_bundle(path) -> AnalysisBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read bundle {path}: {e.strerror}") from e
    if not data.startswith((MAGIC + "\n").encode()):
        raise BundleFormatError(f"{path}: missing {MAGIC} magic")
    try:
        end = data.index(b"\nend\n") + 5
        lines = data[:end].decode("ascii").splitlines()[1:-1]
        kv = dict(line.split(" ", 1) for line in lines)
        fs = int(kv["sample_rate"])
        n = int(kv["frames"])
        order = int(kv["mgc_order"])
        alpha = float(kv["alpha"])
        grid = FrameGrid(float(kv["frame_shift"]), float(kv["frame_length"]), n)
        decl = [(k, int(c)) for k, c in (t.split(":") for t in kv["tracks"].split())]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise BundleFormatError(f"{path}: malformed header ({e})") from e
    payload = data[end:]
    if len(payload) != 4 * sum(c for _, c in decl):
        raise BundleFormatError(f"{path}: payload size does not match the declared tracks")
    arrays, off = {}, 0
    for k, c in decl:
        arrays[k] = np.frombuffer(payload, "<f4", c, off).astype(float)
        off += 4 * c
    for k in ("contf0", "mvf", "mgc"):
        if k not in arrays:
            raise BundleFormatError(f"{path}: mandatory track {k!r} missing")
    try:
        contf0 = ParamTrack(arrays["contf0"], grid, TrackKind.CONTF0)
        mvf = ParamTrack(arrays["mvf"], grid, TrackKind.MVF)
        mgc = MgcTrack(arrays["mgc"].reshape(n, order + 1), order, alpha, grid, fs)
        hnr = ParamTrack(arrays["hnr"], grid, TrackKind.HNR) if "hnr" in arrays else None
        cnm = None
        if "cnm" in arrays:
            cnm = CnmTrack(arrays["cnm"], grid, float(kv.get("cnm_threshold", DEFAULT_THRESHOLD)),
                           bool(int(kv.get("cnm_degenerate", 0))))
        basis = None
        if "basis" in arrays:
            r, L = (int(s) for s in kv["basis_shape"].split())
            basis = ResidualBasis(arrays["basis"].reshape(r, L), arrays["basis_eig"],
                                  int(kv["basis_frames"]), arrays.get("basis_mean"))
        return AnalysisBundle(contf0, mvf, mgc, hnr, cnm, basis, EnvelopeKind(kv["envelope"]), fs)
    except (ValueError, KeyError) as e:
        raise BundleFormatError(f"{path}: inconsistent bundle ({e})") from e


def quantize_bundle(b: AnalysisBundle) -> AnalysisBundle:
    """The bundle as it reads back from disk (all arrays rounded to float32)."""
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "b.cvoc"
        write_bundle(p, b)
        return read_bundle(p)


# ---------------------------------------------------------------- helpers

def _read_wave(path) -> Waveform:
    try:
        return read_wav(path, normalize=False)
    except FileNotFoundError as e:
        raise InputError(f"no such file: {path}") from e
    except (OSError, EOFError, ValueError, wave.Error) as e:
        raise InputError(f"cannot read WAV {path}: {e}") from e


def _load_ref_track(path) -> np.ndarray:
    try:
        return np.loadtxt(path, ndmin=1)
    except OSError as e:
        raise InputError(f"cannot read reference {path}") from e
    except ValueError as e:
        raise InputError(f"malformed reference {path}: {e}") from e


def _bench_tracks(w: Waveform, cfg: PitchConfig) -> dict:
    base = contf0_baseline(w, cfg)
    return {"baseline": base, "akf": refine_akf(base, w, cfg),
            "timewarp": refine_timewarp(base, w, cfg), "stonemask": refine_stonemask(base, w, cfg)}


def thread_cap() -> int | None:
    """Parallelism cap from ``CVOC_THREADS`` (``None`` when unset)."""
    v = os.environ.get("CVOC_THREADS")
    if v is None or v == "":
        return None
    try:
        n = int(v)
    except ValueError:
        n = 0
    if n < 1:
        raise InputError(f"CVOC_THREADS must be a positive integer, got {v!r}")
    return n


# ---------------------------------------------------------------- commands

def cmd_analyze(a) -> int:
    w = _read_wave(a.input)
    b = analyze(w, frame_shift=a.frame_shift, refine=a.refine, mgc_order=a.mgc_order, alpha=a.alpha,
                envelope=a.envelope, f0_min=a.f0_min, f0_max=a.f0_max, with_hnr=not a.no_hnr,
                with_basis=not a.no_basis, with_cnm=a.cnm, cnm_threshold=a.cnm_threshold)
    write_bundle(a.output, b)
    log.info("wrote %d frames to %s", len(b.contf0), a.output)
    return EXIT_OK


def cmd_synthesize(a) -> int:
    b = read_bundle(a.bundle)
    if a.envelope is not None:
        b = b.__class__(**{**b.__dict__, "envelope_kind": EnvelopeKind(a.envelope)})
    if a.engine == "csm":
        y = synth_csm(b, seed=a.seed)
    else:
        if b.basis is None:
            raise InputError("engine 'sf' needs the 'basis' track; re-run analyze without --no-basis")
        if a.cnm and b.cnm is None:
            raise InputError("--cnm needs the 'cnm' track; re-run analyze with --cnm")
        y = synth_source_filter(b, seed=a.seed, use_cnm=a.cnm)
    write_wav(a.output, y)
    return EXIT_OK


def cmd_pitch_bench(a) -> int:
    cfg = PitchConfig(f0_min=a.f0_min, f0_max=a.f0_max, frame_shift=a.frame_shift)
    if a.input is not None:
        if a.ref is None:
            raise InputError("pitch-bench on a WAV file needs --ref")
        clean = _read_wave(a.input)
        ref = _load_ref_track(a.ref)
    else:
        clean = testsignals.harmonic(a.f0, a.duration)
        n = FrameGrid.for_waveform(clean, a.frame_shift).num_frames
        ref = testsignals.f0_at_frames(a.f0, n, a.frame_shift)
    snrs = list(range(0, 41, 10)) if a.sweep else [a.snr]
    out = open(a.output, "w", newline="") if a.output else sys.stdout
    try:
        wr = csv.writer(out, lineterminator="\n")
        for bi, snr in enumerate(snrs):
            w = clean if a.noise == "none" else add_noise(clean, a.noise, snr, seed=a.seed)
            tracks = _bench_tracks(w, cfg)
            if bi:
                out.write("\n")
            out.write(f"# noise={a.noise} snr_db={snr}\n")
            wr.writerow(["method", "gpe", "mfpe", "std", "rmse"])
            for m in BENCH_METHODS:
                est = tracks[m].values
                k = min(est.size, ref.size)
                r = pitch_error_metrics(est[:k], ref[:k])
                wr.writerow([m] + [f"{v:.6g}" for v in (r.gpe, r.mfpe, r.std, r.rmse)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_metrics(a) -> int:
    rep = evaluate(_read_wave(a.ref), _read_wave(a.test))
    print(rep.to_line())
    return EXIT_OK


def cmd_vc_align(a) -> int:
    path, dist = align_bundles(read_bundle(a.a), read_bundle(a.b), a.metric)
    text = path.to_text()
    if a.output:
        Path(a.output).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("alignment distance %.6g over %d steps", dist, len(path))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvoc", description="Continuous vocoder toolkit.")
    p.add_argument("--verbose", "-v", action="store_true", help="debug logging (per-frame details)")
    p.add_argument("--seed", type=int, default=0, help="seed for every noise generator")
    # the shared flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", parents=[common], help="WAV -> parameter bundle")
    an.add_argument("input")
    an.add_argument("output")
    an.add_argument("--frame-shift", type=float, default=0.005)
    an.add_argument("--mgc-order", type=int, choices=(24, 60), default=24)
    an.add_argument("--alpha", type=float, default=0.42)
    an.add_argument("--envelope", choices=[k.value for k in EnvelopeKind], default="true")
    an.add_argument("--refine", choices=("none", "akf", "timewarp", "stonemask"), default="none")
    an.add_argument("--cnm", action="store_true", help="also compute the continuous noise mask")
    an.add_argument("--cnm-threshold", type=float, default=DEFAULT_THRESHOLD)
    an.add_argument("--f0-min", type=float, default=80.0)
    an.add_argument("--f0-max", type=float, default=300.0)
    an.add_argument("--no-hnr", action="store_true")
    an.add_argument("--no-basis", action="store_true")
    an.set_defaults(func=cmd_analyze)

    sy = sub.add_parser("synthesize", parents=[common], help="bundle -> WAV")
    sy.add_argument("bundle")
    sy.add_argument("output")
    sy.add_argument("--engine", choices=("sf", "csm"), default="csm")
    sy.add_argument("--envelope", choices=[k.value for k in EnvelopeKind], default=None,
                    help="override the bundle's noise envelope")
    sy.add_argument("--cnm", action="store_true", help="apply the noise mask (sf engine)")
    sy.set_defaults(func=cmd_synthesize)

    pb = sub.add_parser("pitch-bench", parents=[common], help="GPE/MFPE/STD/RMSE of the four trackers as CSV")
    pb.add_argument("input", nargs="?", help="WAV file (omit for a synthetic harmonic signal)")
    pb.add_argument("--ref", help="reference F0, one value per frame (0 = unvoiced)")
    pb.add_argument("--f0", type=float, default=150.0, help="synthetic F0")
    pb.add_argument("--duration", type=float, default=1.0)
    pb.add_argument("--noise", choices=("none", "white", "pink"), default="none")
    pb.add_argument("--snr", type=float, default=0.0)
    pb.add_argument("--sweep", action="store_true", help="SNR 0..40 dB in 10 dB steps")
    pb.add_argument("--frame-shift", type=float, default=0.005)
    pb.add_argument("--f0-min", type=float, default=80.0)
    pb.add_argument("--f0-max", type=float, default=300.0)
    pb.add_argument("-o", "--output")
    pb.set_defaults(func=cmd_pitch_bench)

    me = sub.add_parser("metrics", parents=[common], help="objective distances as one JSON line")
    me.add_argument("ref")
    me.add_argument("test")
    me.set_defaults(func=cmd_metrics)

    va = sub.add_parser("vc-align", parents=[common], help="DTW path between two bundles")
    va.add_argument("a")
    va.add_argument("b")
    va.add_argument("-o", "--output")
    va.add_argument("--metric", default="euclidean", choices=("euclidean", "cityblock"))
    va.set_defaults(func=cmd_vc_align)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        thread_cap()
        return args.func(args)
    except InputError as e:
        print(f"cvoc: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BundleFormatError as e:
        print(f"cvoc: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"cvoc: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
