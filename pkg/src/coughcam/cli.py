"""``coughcam`` command line: one binary, one subcommand per stage.

Every subcommand writes files and never prompts.  JSON outputs carry a
``meta`` block with the command line and seed so a run can be repeated.
Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .audio_io import MODEL_RATE, RESAMPLE_METHODS, AudioClip, read_wav, read_wav_channels, resample, write_wav
from .errors import CoughCamError

log = logging.getLogger("coughcam")


def _meta(args, **extra) -> dict:
    meta = {"tool": "coughcam", "version": __version__, "argv": list(args.argv), "seed": getattr(args, "seed", None)}
    meta.update(extra)
    return meta


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _to_model_rate(clip: AudioClip, method: str) -> AudioClip:
    if clip.sample_rate != MODEL_RATE:
        log.info("resampling %d Hz -> %d Hz (%s)", clip.sample_rate, MODEL_RATE, method)
        clip = resample(clip, MODEL_RATE, method)
    return clip


def _plane(args):
    from .beamforming import InspectionPlane

    return InspectionPlane(args.distance, args.width, args.height, tuple(args.resolution))


def _add_plane_flags(p) -> None:
    p.add_argument("--distance", type=float, default=1.0, help="inspection plane distance (m)")
    p.add_argument("--width", type=float, default=1.0, help="plane width (m)")
    p.add_argument("--height", type=float, default=1.0, help="plane height (m)")
    p.add_argument("--resolution", type=int, nargs=2, default=(32, 32), metavar=("NX", "NY"))
    p.add_argument("--interp", choices=("linear", "sinc"), default="linear", help="fractional delay interpolation")


def _load_model(args, spec: str | None):
    from .cnn import build_network, read_weight_files, zero_weights

    if args.weights:
        return read_weight_files(args.weights, args.blob)
    if getattr(args, "zero_model", None):
        from .features import spec_channels

        return zero_weights(build_network(args.zero_model, spec_channels(spec or "MFCC-V-A")))
    return None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_features(args) -> int:
    from .features import assemble, feature_csv, write_feature

    raw = read_wav(args.wav)
    clip = _to_model_rate(raw, args.resample)
    n = int(round(args.seconds * MODEL_RATE))
    start = int(round(args.offset * MODEL_RATE))
    if start + n > len(clip):
        raise CoughCamError(f"{args.wav} holds {len(clip) / MODEL_RATE:.3f} s, need {args.offset + args.seconds:.3f} s")
    clip = AudioClip(clip.samples[start : start + n], MODEL_RATE)
    tensor = assemble(clip, args.spec)
    out = Path(args.out)
    write_feature(tensor, out)
    meta = _meta(
        args,
        spec=args.spec,
        shape=list(tensor.shape),
        source=str(args.wav),
        source_rate=raw.sample_rate,
        resample_method=args.resample if raw.sample_rate != MODEL_RATE else None,
        offset_s=args.offset,
    )
    _write_json(out.with_suffix(out.suffix + ".json"), meta)
    if args.csv:
        Path(args.csv).write_text(feature_csv(tensor))
    if args.png:
        from .plotting import plot_feature

        plot_feature(tensor, args.png, f"{args.spec}  {Path(args.wav).name}")
    print(f"{out}: {args.spec} {'x'.join(map(str, tensor.shape))}")
    return 0


def _wavs(directory: Path) -> list[Path]:
    return sorted(p for p in directory.rglob("*") if p.suffix.lower() == ".wav")


def cmd_augment(args) -> int:
    from .augmentation import AugmentPolicy, LabeledClip, augment_dataset, manifest_record, write_manifest
    from .metrics import parse_label

    events = []
    for sub in sorted(p for p in Path(args.events).iterdir() if p.is_dir()):
        label = parse_label(sub.name)
        for wav in _wavs(sub):
            clip = _to_model_rate(read_wav(wav), args.resample)
            events.append(LabeledClip(clip, label, str(wav.relative_to(args.events))))
    if not events:
        raise CoughCamError(f"no wav files under {args.events}/<cough|others>/")
    noise_paths = _wavs(Path(args.noise))
    noises = [_to_model_rate(read_wav(p), args.resample) for p in noise_paths]
    noise_ids = [str(p.relative_to(args.noise)) for p in noise_paths]
    policy = AugmentPolicy(
        tuple(args.mix_range), tuple(args.volume_range), args.cough_reps, args.others_reps, args.seed
    )
    items = augment_dataset(events, noises, policy, noise_ids, workers=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for item in items:
        stem = Path(item.source_id).stem
        path = out / f"{item.provenance['index']:06d}_{item.label.lower()}_{stem}.wav"
        write_wav(item.clip, path)
        records.append(manifest_record(item, path.name))
    write_manifest(records, out / "manifest.jsonl")
    _write_json(out / "augment.json", _meta(args, events=len(events), noises=len(noises), outputs=len(items)))
    print(f"{len(items)} clips from {len(events)} events -> {out}")
    return 0


def cmd_init_weights(args) -> int:
    from .cnn import build_network, init_weights, write_weight_files, zero_weights
    from dataclasses import replace

    from .features import spec_channels

    model = build_network(args.kind, spec_channels(args.spec))
    model = zero_weights(model) if args.zero else init_weights(model, args.seed)
    model = replace(model, feature_spec=args.spec)
    manifest, blob = write_weight_files(model, args.out)
    print(f"{manifest} + {blob.name}: {args.kind}, {model.n_params} parameters")
    return 0


def cmd_infer(args) -> int:
    from .cnn import forward
    from .features import assemble, normalize, read_feature

    model = _load_model(args, args.spec)
    path = Path(args.input)
    if path.suffix.lower() == ".wav":
        spec = args.spec or model.feature_spec or "MFCC-V-A"
        clip = _to_model_rate(read_wav(path), args.resample)
        from .audio_io import SegmentationPolicy, segment

        windows = segment(clip, SegmentationPolicy(2.0, 0.0))
        if not windows:
            raise CoughCamError(f"{path} is shorter than one 2 s window")
        tensors = [assemble(w, spec) for w in windows]
        starts = [2.0 * i for i in range(len(windows))]
    else:
        tensors = [read_feature(path)]
        spec = tensors[0].spec
        starts = [None]
    if model.channel_stats is not None:
        tensors = normalize(tensors, model.channel_stats)
    x = np.stack([t.to_array() for t in tensors])
    probs = forward(model, x).probabilities
    rows = [
        {"t_start": s, "p_cough": float(p[0]), "p_others": float(p[1]), "label": "Cough" if p[0] > args.threshold else "Others"}
        for s, p in zip(starts, probs)
    ]
    result = {"meta": _meta(args, kind=model.kind, spec=spec, input=str(path)), "predictions": rows}
    if args.out:
        _write_json(args.out, result)
    for r in rows:
        print(f"{r['t_start']},{r['p_cough']:.6f},{r['p_others']:.6f},{r['label']}")
    return 0


def _scene_signals(args, array):
    from .beamforming import load_scene, simulate_scene

    scene = load_scene(args.scene)
    fs = args.sample_rate
    duration = args.duration
    if duration is None:
        longest = max(len(s.signal) / s.signal.sample_rate for s in scene.sources)
        duration = longest + 0.05
    return simulate_scene(scene, array, duration, fs, seed=args.seed, interp=args.interp), scene.c


def cmd_beamform(args) -> int:
    from .beamforming import beamform_power, locate_peaks, read_geometry, write_map_csv, write_map_pgm

    array = read_geometry(args.geometry)
    plane = _plane(args)
    if args.scene:
        signals, c = _scene_signals(args, array)
        fs = args.sample_rate
    else:
        frames, fs = read_wav_channels(args.recording)
        signals, c = frames.T, args.c
        if signals.shape[0] != array.n_mics:
            raise CoughCamError(f"{args.recording} has {signals.shape[0]} channels, geometry has {array.n_mics}")
    window = None
    if args.window:
        window = (int(round(args.window[0] * fs)), int(round(args.window[1] * fs)))
    pmap = beamform_power(signals, plane, array, fs, c, window, args.interp)
    peaks = locate_peaks(pmap, args.peaks, args.min_separation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_map_csv(pmap, out / "power_map.csv")
    write_map_pgm(pmap, out / "power_map.pgm")
    from .plotting import plot_power_map

    plot_power_map(pmap, out / "power_map.png", peaks)
    peak_rows = [{"row": p.pixel[0], "col": p.pixel[1], "x": p.position[0], "y": p.position[1], "z": p.position[2], "power": p.power} for p in peaks]
    _write_json(out / "peaks.json", {"meta": _meta(args, n_mics=array.n_mics, sample_rate=fs, window_s=list(pmap.window)), "peaks": peak_rows})
    for r in peak_rows:
        print(f"{r['row']},{r['col']},{r['x']:.4f},{r['y']:.4f},{r['power']:.6g}")
    return 0


def cmd_detect(args) -> int:
    from .pipeline import Localizer, StreamConfig, StreamSummary, StubClassifier, NetworkClassifier, run_stream, write_events

    array = None
    if args.geometry:
        from .beamforming import read_geometry

        array = read_geometry(args.geometry)
    if args.scene:
        if array is None:
            raise CoughCamError("--scene needs --geometry")
        data, c = _scene_signals(args, array)
        if args.sample_rate != MODEL_RATE:
            raise CoughCamError(f"detection runs at {MODEL_RATE} Hz")
    else:
        frames, fs = read_wav_channels(args.wav)
        if fs != MODEL_RATE:
            frames = np.stack(
                [_to_model_rate(AudioClip(frames[:, k], fs), args.resample).samples for k in range(frames.shape[1])], axis=1
            )
        data, c = frames.T, args.c

    config = StreamConfig(
        feature_spec=args.spec or "MFCC-V-A",
        decision_threshold=args.threshold,
        localize=args.localize,
        workers=args.threads,
    )
    if args.stub:
        classifier = StubClassifier.from_name(args.stub)
    else:
        model = _load_model(args, args.spec)
        classifier = NetworkClassifier(model, args.spec, threshold=args.threshold)
    localizer = Localizer(array, _plane(args), c, args.interp) if args.localize else None
    summary = StreamSummary()
    events = run_stream(data, classifier, config, localizer, summary=summary)
    out = Path(args.out)
    write_events(events, out)
    _write_json(out.with_suffix(".summary.json"), {"meta": _meta(args), "summary": summary.as_dict()})
    if args.png:
        from .plotting import plot_events

        plot_events(events, args.png, args.threshold)
    print(f"{summary.total_windows} windows, {summary.cough_count} Cough -> {out}")
    return 0


def cmd_metrics(args) -> int:
    from . import metrics

    pairs = metrics.read_pairs_csv(args.csv)
    cm = metrics.accumulate(pairs)
    report = metrics.report_dict(cm)
    norm, flags = metrics.normalize(cm)
    report["normalized"] = norm.tolist()
    report["meta"] = _meta(args, input=str(args.csv))
    if args.out:
        _write_json(args.out, report)
    if args.png:
        from .plotting import plot_confusion

        plot_confusion(norm, args.png)
    print("tp,fp,fn,tn,accuracy,recall,precision,f1")
    print(",".join(str(report[k]) for k in ("tp", "fp", "fn", "tn")) + "," + ",".join(f"{report[k]:.6f}" for k in ("accuracy", "recall", "precision", "f1")))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run

    return 0 if run() else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    from .cnn import NETWORK_KINDS
    from .features import VALID_SPECS

    ap = argparse.ArgumentParser(prog="coughcam", description="Cough detection camera toolkit.")
    ap.add_argument("--version", action="version", version=f"coughcam {__version__}")
    ap.add_argument("--threads", type=_positive_int, default=1, help="worker / BLAS thread cap (default 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="wav -> feature tensor file")
    p.add_argument("wav")
    p.add_argument("--spec", choices=VALID_SPECS, default="MFCC-V-A")
    p.add_argument("--out", required=True)
    p.add_argument("--offset", type=float, default=0.0, help="start of the 2 s window (s)")
    p.add_argument("--seconds", type=float, default=2.0, help=argparse.SUPPRESS)
    p.add_argument("--resample", choices=RESAMPLE_METHODS, default="sinc")
    p.add_argument("--csv", help="also write the planes as CSV")
    p.add_argument("--png", help="also render the planes")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("augment", help="event dir + noise dir -> augmented set + manifest")
    p.add_argument("--events", required=True, help="directory with cough/ and others/ subdirectories")
    p.add_argument("--noise", required=True, help="directory of background noise wavs")
    p.add_argument("--out", required=True)
    p.add_argument("--cough-reps", type=_positive_int, default=45)
    p.add_argument("--others-reps", type=_positive_int, default=9)
    p.add_argument("--mix-range", type=float, nargs=2, default=(0.0, 0.4), metavar=("LO", "HI"))
    p.add_argument("--volume-range", type=float, nargs=2, default=(0.6, 1.0), metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resample", choices=RESAMPLE_METHODS, default="sinc")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("init-weights", help="write a seeded (untrained) weight manifest + blob")
    p.add_argument("--kind", choices=NETWORK_KINDS, required=True)
    p.add_argument("--spec", choices=VALID_SPECS, default="MFCC-V-A")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero", action="store_true", help="all-zero weights (outputs 0.5/0.5)")
    p.add_argument("--out", required=True, help="manifest path; the blob goes next to it as .bin")
    p.set_defaults(func=cmd_init_weights)

    def model_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--weights", help="weight manifest JSON")
        g.add_argument("--zero-model", choices=NETWORK_KINDS, help="use an all-zero network")
        p.add_argument("--blob", help="weight blob (default: named in the manifest)")
        p.add_argument("--spec", choices=VALID_SPECS, help="feature spec (default: from the manifest)")
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--resample", choices=RESAMPLE_METHODS, default="sinc")

    p = sub.add_parser("infer", help="feature file or wav + weights -> probabilities")
    p.add_argument("input")
    model_flags(p)
    p.add_argument("--out", help="JSON output")
    p.set_defaults(func=cmd_infer)

    def scene_flags(p):
        p.add_argument("--geometry", help="microphone positions CSV (x,y,z per row)")
        p.add_argument("--sample-rate", type=int, default=MODEL_RATE)
        p.add_argument("--duration", type=float, help="simulated seconds (default: longest source)")
        p.add_argument("--seed", type=int, default=0, help="noise seed for simulated scenes")
        p.add_argument("--c", type=float, default=343.0, help="speed of sound for recordings (m/s)")
        _add_plane_flags(p)

    p = sub.add_parser("beamform", help="scene or recording + geometry -> power map + peaks")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", help="scene JSON to simulate")
    g.add_argument("--recording", help="multichannel wav, one channel per microphone")
    scene_flags(p)
    p.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"), help="analysis window (s)")
    p.add_argument("--peaks", type=_positive_int, default=1)
    p.add_argument("--min-separation", type=int, default=1, help="peak suppression radius (pixels)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("detect", help="stream detection -> events JSONL")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--wav", help="mono or multichannel recording")
    g.add_argument("--scene", help="scene JSON to simulate")
    model_flags(p)
    p.add_argument("--stub", choices=("always-cough", "always-others"))
    p.add_argument("--localize", action="store_true", help="beamform Cough windows (needs --geometry)")
    scene_flags(p)
    p.add_argument("--out", required=True, help="events JSONL")
    p.add_argument("--png", help="confidence timeline figure")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("metrics", help="predicted,truth CSV -> JSON report")
    p.add_argument("csv")
    p.add_argument("--out", help="JSON report")
    p.add_argument("--png", help="normalized confusion matrix figure")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("selftest", help="run the hand-example checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def _validate(ap, args) -> None:
    if args.command in ("infer", "detect"):
        has_model = args.weights or args.zero_model or getattr(args, "stub", None)
        if not has_model:
            ap.error(f"{args.command} needs --weights, --zero-model" + (" or --stub" if args.command == "detect" else ""))
        if getattr(args, "stub", None) and (args.weights or args.zero_model):
            ap.error("--stub excludes --weights/--zero-model")
        if not 0.0 <= args.threshold <= 1.0:
            ap.error("--threshold must lie in [0, 1]")
    if args.command == "detect" and args.localize and not args.geometry:
        ap.error("--localize needs --geometry")
    if args.command == "beamform" and not args.geometry:
        ap.error("beamform needs --geometry")


def _configure_logging() -> None:
    name = os.environ.get("SFC_LOG", "WARNING").upper()
    level = logging.getLevelName(name)
    bad = not isinstance(level, int)
    logging.basicConfig(level=logging.WARNING if bad else level, format="%(levelname)s %(name)s: %(message)s")
    if bad:
        log.warning("ignoring SFC_LOG=%r, not a log level", name)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_logging()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        _validate(ap, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (CoughCamError, ValueError, OSError, KeyError) as exc:
        log.debug("failure detail", exc_info=True)
        print(f"coughcam {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
