"""Command-line pipeline: synth | train | infer | smooth | eval | calibrate | report.

Exit codes: 0 success, 2 usage error, 3 file/format error, 4 invalid input
or data, 1 unexpected internal failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, model, postprocess, report, stream, synth

WINDOW_CHOICES_S = (10, 20, 30, 60, 100, 120)
SAMPLE_RATE = 125


def _window_samples(seconds: int) -> int:
    return seconds * SAMPLE_RATE


def _add_window_size(p, required=False, default=None):
    p.add_argument(
        "--window-size", type=int, choices=WINDOW_CHOICES_S, required=required,
        default=default, help="classifier window length in seconds",
    )


def cmd_synth(args) -> int:
    script = synth.load_script(args.scenario)
    wave, labels = synth.generate_scenario(script)
    synth.save_stream(wave, args.out_stream)
    synth.save_labels(labels, args.out_labels)
    print(
        f"{wave.bed_id}: {wave.n_samples} samples ({wave.duration_s:.0f}s), "
        f"{len(labels)} labeled events -> {args.out_stream}, {args.out_labels}"
    )
    return 0


def cmd_train(args) -> int:
    if len(args.stream) != len(args.labels):
        raise ValueError("--stream and --labels must be given the same number of times")
    w = _window_samples(args.window_size)
    rng = np.random.default_rng(args.seed)
    windows = []
    for stream_path, labels_path in zip(args.stream, args.labels):
        wave = synth.load_stream(stream_path)
        labels = synth.load_labels(labels_path)
        windows.extend(
            dataset.extract_training_windows(
                wave, labels, w, negative_ratio=args.neg_ratio, rng=rng,
            )
        )
    splits = dataset.split_dataset(windows, args.seed)
    arch = model.ArchConfig(
        conv1_filters=args.filters, conv2_filters=2 * args.filters
    )
    cfg = model.TrainConfig(
        batch_size=args.batch_size, learning_rate=args.lr,
        max_epochs=args.epochs, early_stop_patience=args.patience,
        rng_seed=args.seed,
    )
    params, history = model.train(splits, arch, cfg, verbose=args.verbose)
    model.save_model(params, args.model)
    if args.history:
        model.save_history_csv(history, args.history)
    test_probs = model.predict_batch(params, np.stack([x.x for x in splits.test]))
    metrics = evaluation.static_metrics(
        (test_probs > 0.5).astype(int), [x.y for x in splits.test]
    )
    pretty = {k: ("absent" if v is None else f"{v:.3f}") for k, v in metrics.items()}
    print(
        f"trained {len(windows)} windows (best epoch {history.best_epoch}); "
        f"held-out test: {pretty} -> {args.model}"
    )
    return 0


def cmd_infer(args) -> int:
    params = model.load_model(args.model)
    sources = {}
    for path in args.stream:
        wave = synth.load_stream(path)
        sources[wave.bed_id] = wave
    cfg = stream.SlidingConfig(
        window_samples=params.window_samples,
        step_samples=args.step_size,
        batch_windows=args.batch,
    )
    run = stream.stream_infer(
        params, sources, cfg, log_path=args.log, max_workers=args.workers
    )
    for bed in sorted(run.records):
        print(f"{bed}: {len(run.records[bed])} records, {run.gap_skips[bed]} gap skips")
    for bed, err in run.errors.items():
        print(f"{bed}: FAILED: {err}", file=sys.stderr)
    return 4 if run.errors else 0


def _bed_records(log_path, bed=None):
    records = stream.read_log(log_path)
    if not records:
        raise ValueError(f"{log_path}: no records")
    by_bed: dict[str, list] = {}
    for r in records:
        by_bed.setdefault(r.bed_id, []).append(r)
    if bed is not None:
        if bed not in by_bed:
            raise ValueError(f"bed {bed!r} not present in {log_path}")
        by_bed = {bed: by_bed[bed]}
    return by_bed


def _infer_step(records) -> int:
    starts = sorted({r.window_start_idx for r in records})
    diffs = [b - a for a, b in zip(starts, starts[1:]) if b > a]
    return min(diffs) if diffs else records[0].window_samples


def cmd_smooth(args) -> int:
    by_bed = _bed_records(args.log, args.bed)
    if len(by_bed) != 1:
        raise ValueError(
            f"log contains beds {sorted(by_bed)}; pick one with --bed"
        )
    ((bed, records),) = by_bed.items()
    w = records[0].window_samples
    sigma = args.sigma if args.sigma is not None else _infer_step(records)
    smoothed = postprocess.smooth(records, sigma, w)
    postprocess.save_smoothed_csv(smoothed, args.out)
    print(f"{bed}: smoothed {len(smoothed)} positions (sigma={sigma}) -> {args.out}")
    if args.events:
        decisions = postprocess.threshold(smoothed, args.theta)
        events = postprocess.merge_events(
            smoothed, decisions, bed_id=bed, window_samples=w,
            max_gap_s=args.max_gap,
        )
        postprocess.save_events_csv(events, args.events)
        print(f"{bed}: {len(events)} events at theta={args.theta} -> {args.events}")
    return 0


def _parse_bed_labels(pairs) -> dict[str, list]:
    truth = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--bed-labels expects BED=LABELS.csv, got {pair!r}")
        bed, _, path = pair.partition("=")
        labels = synth.load_labels(path)
        truth[bed] = [
            (iv.start_idx, iv.end_idx)
            for iv in labels
            if iv.kind is synth.EventKind.LINE_ACCESS
        ]
    return truth


def _tiles_by_bed(args):
    by_bed = _bed_records(args.log)
    sizes = {r.window_samples for records in by_bed.values() for r in records}
    if len(sizes) != 1:
        raise ValueError(f"log mixes window sizes {sorted(sizes)}")
    (w,) = sizes
    tiles = {}
    spans = []
    for bed, records in by_bed.items():
        sigma = args.sigma if args.sigma is not None else _infer_step(records)
        tiles[bed] = postprocess.tile_predictions(records, w, sigma)
        spans.append((records[0].window_start_idx,
                      records[-1].window_start_idx + w))
    period = (min(s for s, _ in spans), max(e for _, e in spans))
    return tiles, w, period


def cmd_eval(args) -> int:
    truth = _parse_bed_labels(args.bed_labels)
    tiles, w, _ = _tiles_by_bed(args)
    total = evaluation.ConfusionCounts()
    for bed, bed_tiles in tiles.items():
        pos, neg = evaluation.decision_windows(bed_tiles, w, args.theta)
        total = total + evaluation.classify_windows(
            pos, neg, truth.get(bed, []), far_s=args.far
        )
    metrics = evaluation.retrospective_metrics(total)
    print(f"counts: tp={total.tp} fp={total.fp} tn={total.tn} fn={total.fn} "
          f"(step recorded: sigma={args.sigma}, theta={args.theta})")
    for name, value in metrics.items():
        print(f"{name}: " + ("absent" if value is None else f"{value:.4f}"))
    if args.out:
        evaluation.metrics_csv([metrics], args.out, label="run")
    return 0


def cmd_calibrate(args) -> int:
    truth = _parse_bed_labels(args.bed_labels)
    tiles, w, period = _tiles_by_bed(args)
    results = evaluation.calibrate_threshold(
        tiles, truth, w, period=period, n_folds=args.folds, far_s=args.far
    )
    for r in results:
        pretty = {k: ("absent" if v is None else f"{v:.3f}")
                  for k, v in r.metrics.items()}
        print(f"fold {r.fold_id}: theta*={r.theta_star:.2f} "
              f"f1(calibration)={r.f1_at_theta_star:.3f} eval={pretty}")
    print(evaluation.format_metrics_table([r.metrics for r in results],
                                          title="across folds (mean +/- std, %):"))
    if args.out:
        evaluation.metrics_csv([r.metrics for r in results], args.out)
    return 0


def cmd_report(args) -> int:
    events = postprocess.load_events_csv(args.events)
    sessions = report.load_sessions_csv(args.sessions)
    if args.kind == "summary":
        as_of = args.as_of
        if as_of is None:
            candidates = [e.end_epoch for e in events] + [
                s.bounded_end(s.start_epoch) for s in sessions
            ]
            as_of = max(candidates)
        items = report.bed_summary(events, sessions, as_of)
        print(report.render(items, args.format, include_time_saved=args.time_saved))
    else:
        items = report.period_aggregate(events, sessions, bucket_days=args.bucket_days)
        print(report.render(items, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="needlestack",
        description="Line-access artifact detection for blood-pressure waveforms",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a scenario file to a stream + labels",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--scenario", required=True, help="scenario script file")
    p.add_argument("--out-stream", required=True, help="output .nstk stream")
    p.add_argument("--out-labels", required=True, help="output labels CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="build windows from labeled streams and train",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--stream", action="append", required=True, help="input stream (repeatable)")
    p.add_argument("--labels", action="append", required=True, help="labels CSV paired with --stream")
    _add_window_size(p, required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--history", help="optional training history CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neg-ratio", type=float, default=None,
                   help="cap clean negatives at ratio * positives")
    p.add_argument("--filters", type=int, default=16, help="conv1 filters (conv2 = 2x)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="sliding-window inference over streams",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--stream", action="append", required=True, help="input stream (repeatable)")
    p.add_argument("--model", required=True)
    p.add_argument("--log", required=True, help="output prediction log")
    p.add_argument("--step-size", type=int, default=1250, help="step in samples")
    p.add_argument("--batch", type=int, default=256, help="windows per model call")
    p.add_argument("--workers", type=int, default=None, help="parallel bed lanes")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("smooth", help="smooth one bed's log; optionally emit events",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--log", required=True)
    p.add_argument("--bed", default=None, help="bed id (required if the log has several)")
    p.add_argument("--sigma", type=float, default=None,
                   help="kernel std in samples (default: the log's step size)")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--max-gap", type=float, default=30.0, help="event merge gap, seconds")
    p.add_argument("--out", required=True, help="smoothed predictions CSV")
    p.add_argument("--events", default=None, help="optional merged events CSV")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("eval", help="retrospective interval-schema evaluation",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--log", required=True)
    p.add_argument("--bed-labels", action="append", required=True,
                   metavar="BED=LABELS.csv", help="truth labels per bed (repeatable)")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--far", type=float, default=30.0, help="tolerance distance, seconds")
    p.add_argument("--out", default=None, help="optional metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="k-fold F1 threshold calibration",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--log", required=True)
    p.add_argument("--bed-labels", action="append", required=True,
                   metavar="BED=LABELS.csv")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--far", type=float, default=30.0)
    p.add_argument("--out", default=None, help="optional per-fold metrics CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="bed summaries and utilization aggregates",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--events", required=True, help="events CSV")
    p.add_argument("--sessions", required=True, help="line sessions CSV")
    p.add_argument("--kind", choices=("summary", "aggregate"), default="summary")
    p.add_argument("--as-of", type=float, default=None,
                   help="report epoch (summary; default: latest data)")
    p.add_argument("--bucket-days", type=int, default=14)
    p.add_argument("--format", choices=("text", "csv", "plotdata"), default="text")
    p.add_argument("--time-saved", action="store_true",
                   help="append the documentation-minutes-saved line")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except (OSError, model.ModelFormatError, stream.LogFormatError) as exc:
        print(f"error (io-format): {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error (invalid-input): {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error (internal): {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
