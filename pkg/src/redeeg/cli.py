"""Command-line entry point: ``redeeg <subcommand> [flags]``.

Subcommands::

    synth   generate a synthetic corpus
    train   train a detector (and tune its threshold) on a corpus
    tune    grid-search the output threshold of a trained model
    detect  predict and postprocess events for recordings
    eval    score predicted events against annotations
    split   band-power / kernel PCA split analysis
    cwt     export the spectrogram of a recording excerpt

Values resolve as: command-line flag, then ``--config`` JSON, then defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, detector, evalkit, splitkit, synthgen
from .cwt import CwtConfig, cwt, write_spectrogram
from .estimators import EVENT_TYPES, REDDetector
from .sigio import FormatError, read_events, read_recording, write_events

logger = logging.getLogger("redeeg")

CONFIG_SECTIONS = ("synth", "corpus", "model", "train", "detector", "eval", "cwt", "split")


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise FormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args):
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus_split(path, split):
    recs = synthgen.read_corpus(path, [split]).get(split, [])
    if not recs:
        raise ValueError(f"corpus {path} has no recordings in split {split!r}")
    return recs


def _recordings(args):
    if args.recording:
        return [read_recording(p) for p in args.recording]
    if args.corpus:
        return _corpus_split(args.corpus, args.split)
    raise UsageError(f"{args.command}: give --recording or --corpus")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg):
    out = _out_dir(args)
    scfg = dict(cfg.get("synth", {}))
    corpus = {"n_train": 8, "n_val": 3, "n_test": 4, **cfg.get("corpus", {})}
    seed = args.seed if args.seed is not None else corpus.pop("seed", 0)
    corpus.pop("seed", None)
    path = synthgen.generate_corpus(out, seed=seed, config=synthgen.SynthConfig.from_dict(scfg),
                                    **corpus)
    print(path)
    return 0


def _model_section(args, cfg):
    m = dict(cfg.get("model", {}))
    if args.variant is not None:
        m["variant"] = args.variant
    return m


def cmd_train(args, cfg):
    if not args.corpus:
        raise UsageError("train: --corpus is required")
    out = _out_dir(args)
    dcfg = dict(cfg.get("detector", {}))
    tcfg = dict(cfg.get("train", {}))
    seed = args.seed if args.seed is not None else tcfg.get("seed", 0)
    tcfg["seed"] = seed
    threshold = args.threshold if args.threshold is not None else dcfg.get("threshold")
    det = REDDetector(args.event, model_config=_model_section(args, cfg), train_config=tcfg,
                      threshold=threshold, tune_on=dcfg.get("tune_on", "all"), seed=seed)
    train_recs = _corpus_split(args.corpus, "train")
    val_recs = _corpus_split(args.corpus, "val")
    det.fit(train_recs, X_val=val_recs, log_path=out / "train_log.csv")
    det.save(out / "model")
    r = det.train_result_
    summary = {"event_type": args.event, "variant": det.network_.config.variant,
               "best_val_loss": r.best_val_loss, "initial_val_loss": r.initial_val_loss,
               "best_iteration": r.best_iteration, "iterations": r.iterations,
               "stop_reason": r.stop_reason, "threshold": det.threshold_,
               "n_parameters": det.network_.n_parameters()}
    _dump_json(out / "train_summary.json", summary)
    if det.tuning_scores_:
        _write_scores(out / "threshold_scores.csv", det.tuning_scores_)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _write_scores(path, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "af1"])
        for mu, v in sorted(scores.items()):
            w.writerow([repr(mu), repr(v)])


def _load_model(args):
    if not args.model:
        raise UsageError(f"{args.command}: --model is required")
    prefix = Path(args.model)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    det = REDDetector.load(prefix)
    if args.event is not None and args.event != det.event_type:
        raise ValueError(f"model detects {det.event_type!r}, not {args.event!r}")
    return det


def cmd_tune(args, cfg):
    out = _out_dir(args)
    det = _load_model(args)
    det.tune(_recordings(args))
    _write_scores(out / "threshold_scores.csv", det.tuning_scores_)
    doc = {"event_type": det.event_type, "threshold": det.threshold_,
           "af1": det.tuning_scores_[det.threshold_]}
    _dump_json(out / "threshold.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_detect(args, cfg):
    out = _out_dir(args)
    det = _load_model(args)
    dcfg = cfg.get("detector", {})
    mu = args.threshold
    if mu is None and args.threshold_file:
        mu = json.loads(Path(args.threshold_file).read_text())["threshold"]
    if mu is None:
        mu = dcfg.get("threshold", det.threshold_)
    recs = _recordings(args)
    prepped = det._prep(recs)
    coarse = det._coarse(prepped)
    summary = {"event_type": det.event_type, "threshold": float(mu), "recordings": []}
    for rec, p in zip(prepped, coarse):
        ev = detector.detect_events(p, float(mu), rec.signal, det.event_type)
        fname = f"{rec.name}_{det.event_type}.csv"
        write_events(out / fname, ev)
        entry = {"name": rec.name, "events": fname, "n_events": len(ev)}
        if args.dump_probs:
            entry["probs"] = f"{rec.name}_{det.event_type}_probs.f32"
            detector.upsample_probs(p).astype("<f4").tofile(out / entry["probs"])
        summary["recordings"].append(entry)
    _dump_json(out / "detections.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _write_curve(path, grid, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iou_threshold", "f1"])
        for t, v in zip(grid, curve):
            w.writerow([repr(float(t)), repr(float(v))])


def cmd_eval(args, cfg):
    ecfg = cfg.get("eval", {})
    tau = args.iou if args.iou is not None else ecfg.get("iou", evalkit.DEFAULT_IOU)
    grid = tuple(ecfg.get("iou_grid", evalkit.DEFAULT_IOU_GRID))
    if args.truth and args.pred:
        if len(args.truth) != len(args.pred):
            raise UsageError("eval: --truth and --pred must be given the same number of times")
        pairs = [(Path(t).stem, read_events(t), read_events(p))
                 for t, p in zip(args.truth, args.pred)]
    elif args.corpus and args.pred_dir:
        if args.event is None:
            raise UsageError("eval: --event is required with --corpus")
        pairs = []
        for rec in _corpus_split(args.corpus, args.split):
            pred = read_events(Path(args.pred_dir) / f"{rec.name}_{args.event}.csv")
            pairs.append((rec.name, rec.annotations[args.event], pred))
    else:
        raise UsageError("eval: give --truth/--pred files or --corpus with --pred-dir")
    reports = []
    for name, truth, pred in pairs:
        rep = evalkit.evaluate(truth, pred, tau, grid)
        rep["recording"] = name
        reports.append(rep)
    doc = {"iou_threshold": float(tau), "aggregate": evalkit.aggregate(reports),
           "recordings": reports}
    if args.event is not None:
        doc["event_type"] = args.event
    if args.out is not None:
        out = _out_dir(args)
        _dump_json(out / "metrics.json", doc)
        _write_curve(out / "f1_curve.csv", grid, doc["aggregate"]["f1_curve"])
    print(json.dumps(doc["aggregate"], sort_keys=True))
    return 0


def cmd_split(args, cfg):
    if not args.corpus:
        raise UsageError("split: --corpus is required")
    out = _out_dir(args)
    doc = json.loads(Path(args.corpus).read_text())
    membership = {e["name"]: e["split"] for e in doc["recordings"]}
    recs = [r for recs in synthgen.read_corpus(args.corpus).values() for r in recs]
    recs.sort(key=lambda r: r.name)
    gamma = args.gamma if args.gamma is not None else cfg.get("split", {}).get(
        "gamma", splitkit.DEFAULT_GAMMA)
    splitkit.analyze_split(recs, out, gamma=gamma, splits=membership)
    print(out / "gaussians.json")
    return 0


def cmd_cwt(args, cfg):
    out = _out_dir(args)
    if not args.recording or len(args.recording) != 1:
        raise UsageError("cwt: exactly one --recording is required")
    rec = read_recording(args.recording[0])
    ccfg = CwtConfig(**cfg.get("cwt", {}))
    fs = rec.signal.fs
    x = rec.signal.samples
    i0 = int(round(args.start * fs))
    n = int(round(args.duration * fs)) if args.duration is not None else x.size - i0
    if i0 < 0 or n <= 0 or i0 + n > x.size:
        raise ValueError(f"excerpt [{args.start}, +{n / fs}] s lies outside the recording")
    seg = np.zeros(n + 2 * ccfg.border)
    lo, hi = max(i0 - ccfg.border, 0), min(i0 + n + ccfg.border, x.size)
    seg[lo - (i0 - ccfg.border):hi - (i0 - ccfg.border)] = x[lo:hi]
    spec = cwt(seg, fs, ccfg, method="fft")
    path = out / f"{rec.name}_cwt.bin"
    write_spectrogram(path, spec, extra={"recording": rec.name, "start_sec": i0 / fs})
    print(path)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "tune": cmd_tune, "detect": cmd_detect,
            "eval": cmd_eval, "split": cmd_split, "cwt": cmd_cwt}


def build_parser():
    p = argparse.ArgumentParser(prog="redeeg", description="Sleep EEG event detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    common(sp)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("train", help="train a detector on a corpus")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--event", choices=EVENT_TYPES, default="spindle")
    sp.add_argument("--variant", choices=("time", "cwt"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threshold", type=float, help="fix the threshold instead of tuning")

    for name, helptext in (("tune", "tune the output threshold"),
                           ("detect", "detect events in recordings")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--model", required=True, help="checkpoint prefix or .json")
        sp.add_argument("--event", choices=EVENT_TYPES)
        sp.add_argument("--recording", action="append", help="recording manifest (repeatable)")
        sp.add_argument("--corpus")
        sp.add_argument("--split", default="val" if name == "tune" else "test")
        if name == "detect":
            sp.add_argument("--threshold", type=float)
            sp.add_argument("--threshold-file")
            sp.add_argument("--dump-probs", action="store_true",
                            help="also write per-sample probabilities (float32)")

    sp = sub.add_parser("eval", help="score predictions against annotations")
    common(sp)
    sp.add_argument("--truth", action="append")
    sp.add_argument("--pred", action="append")
    sp.add_argument("--corpus")
    sp.add_argument("--split", default="test")
    sp.add_argument("--pred-dir")
    sp.add_argument("--event", choices=EVENT_TYPES)
    sp.add_argument("--iou", type=float)

    sp = sub.add_parser("split", help="kernel PCA split analysis")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--gamma", type=float)

    sp = sub.add_parser("cwt", help="export a spectrogram")
    common(sp)
    sp.add_argument("--recording", action="append", required=True)
    sp.add_argument("--start", type=float, default=0.0)
    sp.add_argument("--duration", type=float)
    return p


def run(argv=None):
    """Execute one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"redeeg: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError, OSError, FloatingPointError) as exc:
        print(f"redeeg {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
