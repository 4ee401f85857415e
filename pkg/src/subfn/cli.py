"""Command-line pipeline: train toy nets, fit scorers, score, sweep, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic given --seed and writes floats at 17 significant digits, so
reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time

import numpy as np

from . import bound, evaluation, net
from .kernel import make_log_binom, make_weighting
from .patterns import (
    ActivationPattern,
    PatternRecord,
    build_region_index,
    read_patterns,
    write_patterns,
)

DEFAULT_RHOS = [1.0, 2.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0]
DEFAULT_DELTAS = [0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
DEFAULT_VAL_FRACTION = 0.15

METHOD_LOG_BOUND = "log-bound"
BASELINE_METHODS = ("entropy", "max-response", "margin")


def _parse_arch(text: str) -> list[int]:
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad architecture {text!r}, expected e.g. 32,32")
    if not widths or any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError(f"hidden widths must be positive, got {text!r}")
    return widths


def _parse_rho(text: str) -> float:
    try:
        rho = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rho {text!r}")
    if math.isnan(rho) or rho <= 0:
        raise argparse.ArgumentTypeError(f"rho must be positive or inf, got {text}")
    return rho


def _parse_delta(text: str) -> float:
    try:
        delta = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad delta {text!r}")
    if not 0.0 < delta <= 1.0:
        raise argparse.ArgumentTypeError(f"delta must be in (0, 1], got {text}")
    return delta


def _parse_float_list(text: str, kind) -> list[float]:
    return [kind(v) for v in text.split(",") if v.strip()]


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg)


# --- pattern extraction shared by fit / score / sweep / export ----------------


def _patterns_from_model(model, data, layer: int | None):
    """(packed patterns, 0/1 misclassification errors, labels) for a dataset."""
    layer = net.last_relu_layer(model) if layer is None else layer
    packed = net.capture_patterns(model, data.inputs, layer)
    preds = net.forward_batch(model, data.inputs).argmax(axis=1)
    errors = (preds != data.labels).astype(np.float64)
    m = model.layers[layer].w.shape[0]
    return packed, errors, data.labels, m


def _records_from_model(model, data, layer: int | None) -> list[PatternRecord]:
    packed, errors, labels, m = _patterns_from_model(model, data, layer)
    return [
        PatternRecord(ActivationPattern(bits=row.tobytes(), m=m), float(e), int(lb))
        for row, e, lb in zip(packed, errors, labels)
    ]


def _load_records(args) -> list[PatternRecord]:
    if args.patterns:
        if args.model or args.data:
            raise ValueError("give either --patterns or --model/--data, not both")
        return read_patterns(args.patterns)
    if not (args.model and args.data):
        raise ValueError("need --patterns, or both --model and --data")
    model = net.load_model(args.model)
    data = net.load_dataset(args.data)
    return _records_from_model(model, data, args.layer)


# --- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.data:
        data = net.load_dataset(args.data)
    else:
        data = net.make_halfmoons(args.n, args.noise, args.seed)
    n = len(data)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(n)
    n_val = int(round(n * args.val_fraction))
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    if train_idx.size == 0:
        raise ValueError("validation fraction leaves no training data")
    train = net.LabeledDataset(data.inputs[train_idx], data.labels[train_idx])

    model = net.make_mlp(data.inputs.shape[1], args.arch, data.n_classes, seed=args.seed)
    config = net.TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    model = net.train_sgd(model, train, config)
    train_acc = net.accuracy(model, train)

    net.save_model(args.out, model)
    net.save_dataset(args.out + ".train.csv", train)
    if n_val:
        val = net.LabeledDataset(data.inputs[val_idx], data.labels[val_idx])
        net.save_dataset(args.out + ".val.csv", val)
        val_acc = net.accuracy(model, val)
    else:
        val_acc = math.nan
    manifest = {
        "version": 1,
        "seed": args.seed,
        "n_total": n,
        "train_indices": [int(i) for i in train_idx],
        "val_indices": [int(i) for i in val_idx],
        "train_file": args.out + ".train.csv",
        "val_file": args.out + ".val.csv" if n_val else None,
    }
    with open(args.out + ".split.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _say(
        args,
        f"trained {len(model.layers)} layers in {time.perf_counter() - t0:.1f}s: "
        f"train acc {train_acc:.4f}, val acc {val_acc:.4f} "
        f"({train_idx.size}/{n_val} split)",
    )
    return 0


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    records = _load_records(args)
    index = build_region_index([(r.pattern, r.error) for r in records])
    spec = make_weighting(args.rho, index.m)
    scorer = bound.fit(index, spec, args.delta)
    bound.save_scorer(args.out, scorer)
    _say(
        args,
        f"fit: N={index.n_total} M={index.m} populated_regions={len(index.regions)} "
        f"rho={args.rho:g} delta={args.delta:g} wall={time.perf_counter() - t0:.2f}s",
    )
    return 0


def cmd_score(args) -> int:
    if args.method == METHOD_LOG_BOUND:
        if not args.scorer:
            raise ValueError("--scorer is required for the log-bound method")
        scorer = bound.load_scorer(args.scorer)
        records = _load_records(args)
        if records and records[0].pattern.m != scorer.m:
            raise ValueError(
                f"pattern length {records[0].pattern.m} does not match scorer m={scorer.m}"
            )
        out = bound.score_batch(scorer, [r.pattern for r in records])
        unreliability = out["log_bound"]
        errors = np.array([r.error for r in records])
        labels = [r.label for r in records]
    else:
        if not (args.model and args.data):
            raise ValueError(f"method {args.method} needs --model and --data")
        model = net.load_model(args.model)
        data = net.load_dataset(args.data)
        logits = net.forward_batch(model, data.inputs)
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        scorers = {
            "entropy": evaluation.entropy_score,
            "max-response": evaluation.max_response_score,
            "margin": evaluation.margin_score,
        }
        fn = scorers[args.method]
        unreliability = np.array([fn(p) for p in probs])
        errors = (logits.argmax(axis=1) != data.labels).astype(np.float64)
        labels = [int(lb) for lb in data.labels]

    samples = [
        evaluation.ScoredSample(
            id=i,
            unreliability=float(u),
            ground_truth_reject=bool(e >= 0.5),
            label=labels[i],
        )
        for i, (u, e) in enumerate(zip(unreliability, errors))
    ]
    ranks = None
    if args.rank:
        order = np.lexsort((np.arange(len(samples)), unreliability))
        ranks = np.empty(len(samples), dtype=np.int64)
        ranks[order] = np.arange(1, len(samples) + 1)  # 1 = most reliable
    evaluation.write_scores_csv(args.out, samples, ranks=ranks)
    _say(args, f"scored {len(samples)} samples with {args.method} -> {args.out}")
    return 0


def _grid_metrics(index, val_patterns, val_reject, rho, delta, binom, n_thresholds):
    spec = make_weighting(rho, index.m)
    scorer = bound.fit(index, spec, delta, binom=binom)
    scores = bound.score_batch(scorer, val_patterns)["log_bound"]
    samples = [
        evaluation.ScoredSample(id=i, unreliability=float(s), ground_truth_reject=bool(r))
        for i, (s, r) in enumerate(zip(scores, val_reject))
    ]
    curve = evaluation.sweep(samples, n_thresholds)
    return curve.aucea, curve.auroc


def cmd_sweep(args) -> int:
    if not args.rhos or not args.deltas:
        raise ValueError("empty hyperparameter grid")
    model = net.load_model(args.model)
    train = net.load_dataset(args.train_data)
    val = net.load_dataset(args.val_data)
    layer = net.last_relu_layer(model) if args.layer is None else args.layer

    packed, errors, _, m = _patterns_from_model(model, train, layer)
    index = build_region_index(
        [
            (ActivationPattern(bits=row.tobytes(), m=m), float(e))
            for row, e in zip(packed, errors)
        ]
    )
    val_packed, val_errors, _, _ = _patterns_from_model(model, val, layer)
    val_patterns = val_packed
    val_reject = val_errors >= 0.5
    if val_reject.all() or not val_reject.any():
        raise ValueError("validation set needs both correct and incorrect predictions")

    binom = make_log_binom(index.m)
    rows = []
    for rho in args.rhos:
        for delta in args.deltas:
            aucea, auroc = _grid_metrics(
                index, val_patterns, val_reject, rho, delta, binom, args.n_thresholds
            )
            rows.append((rho, delta, aucea, auroc))

    key = 2 if args.metric == "aucea" else 3
    best_value = max(r[key] for r in rows)
    best = min((r for r in rows if r[key] == best_value), key=lambda r: (r[0], r[1]))

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "delta", "aucea", "auroc", "selected"])
        for rho, delta, aucea, auroc in rows:
            sel = int((rho, delta) == (best[0], best[1]))
            writer.writerow(
                [f"{rho:.17g}", f"{delta:.17g}", f"{aucea:.17g}", f"{auroc:.17g}", str(sel)]
            )

    if args.best_out:
        spec = make_weighting(best[0], index.m)
        bound.save_scorer(args.best_out, bound.fit(index, spec, best[1], binom=binom))
    _say(
        args,
        f"sweep over {len(rows)} cells: best rho={best[0]:g} delta={best[1]:g} "
        f"({args.metric}={best[key]:.4f}) -> {args.out}",
    )
    print(f"selected rho={best[0]:.17g} delta={best[1]:.17g}")
    return 0


def cmd_heatmap(args) -> int:
    scorer = bound.load_scorer(args.scorer)
    model = net.load_model(args.model)
    if model.input_dim != 2:
        raise ValueError(f"heatmap needs a 2-D input model, got input_dim={model.input_dim}")
    layer = net.last_relu_layer(model) if args.layer is None else args.layer
    if model.layers[layer].w.shape[0] != scorer.m:
        raise ValueError(
            f"layer {layer} width {model.layers[layer].w.shape[0]} != scorer m={scorer.m}"
        )
    res = args.resolution
    if res < 1:
        raise ValueError("resolution must be >= 1")
    gx = np.linspace(args.x0, args.x1, res)
    gy = np.linspace(args.y0, args.y1, res)
    xx, yy = np.meshgrid(gx, gy)  # row-major: y outer, x inner
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
    packed = net.capture_patterns(model, grid, layer)
    scores = bound.score_batch(scorer, packed)["log_bound"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "log_bound"])
        for (x, y), s in zip(grid, scores):
            writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{s:.17g}"])
    _say(args, f"heatmap {res}x{res} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    method_files = []
    for spec_str in args.scores:
        if "=" not in spec_str:
            raise ValueError(f"--scores expects name=path, got {spec_str!r}")
        name, path = spec_str.split("=", 1)
        method_files.append((name, path))
    if not method_files:
        raise ValueError("need at least one --scores name=path")

    curves = {}
    reference = None
    for name, path in method_files:
        samples = evaluation.read_scores_csv(path)
        key = {s.id: s.ground_truth_reject for s in samples}
        if reference is None:
            reference = key
        else:
            if set(key) != set(reference):
                missing = sorted(set(key) ^ set(reference))[0]
                raise ValueError(f"sample id {missing} not shared across score files")
            for sid in key:
                if key[sid] != reference[sid]:
                    raise ValueError(f"ground truth differs across files for id {sid}")
        curves[name] = evaluation.sweep(samples, args.n_thresholds)

    rows = evaluation.summarize(curves)
    evaluation.write_summary_csv(args.out, rows)
    for r in rows:
        _say(args, f"{r.method}: auroc={r.auroc:.4f} aucea={r.aucea:.4f} "
                   f"delta={r.delta_auroc_to_best:+.4f}")
    return 0


def cmd_export_patterns(args) -> int:
    model = net.load_model(args.model)
    data = net.load_dataset(args.data)
    records = _records_from_model(model, data, args.layer)
    write_patterns(args.out, records)
    _say(args, f"exported {len(records)} patterns (m={records[0].pattern.m}) -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    preload = {}
    for spec_str in args.preload:
        if "=" not in spec_str:
            raise ValueError(f"--preload expects name=scorerfile, got {spec_str!r}")
        name, path = spec_str.split("=", 1)
        preload[name] = path
    app = create_app(preload=preload)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning" if args.quiet else "info")
    return 0


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subfn",
        description="Activation-region error bounds as per-sample unreliability scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for any randomness")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("train", parents=[common], help="train a toy ReLU MLP")
    p.add_argument("--dataset", choices=["halfmoons"], default="halfmoons")
    p.add_argument("--data", help="train on a dataset CSV instead of a generator")
    p.add_argument("--n", type=int, default=2000, help="generator sample count")
    p.add_argument("--noise", type=float, default=0.1, help="generator noise sigma")
    p.add_argument("--arch", type=_parse_arch, default=[32, 32], help="hidden widths, e.g. 32,32")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--val-fraction", type=float, default=DEFAULT_VAL_FRACTION)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", parents=[common], help="fit a scorer from patterns")
    p.add_argument("--model", help="model file (with --data)")
    p.add_argument("--data", help="dataset CSV (with --model)")
    p.add_argument("--layer", type=int, help="ReLU layer to capture (default: last)")
    p.add_argument("--patterns", help="pattern file instead of --model/--data")
    p.add_argument("--rho", type=_parse_rho, required=True, help="kernel width (or inf)")
    p.add_argument("--delta", type=_parse_delta, default=0.001)
    p.add_argument("--out", required=True, help="scorer file to write")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", parents=[common], help="score samples")
    p.add_argument("--scorer", help="scorer file (log-bound method)")
    p.add_argument("--model", help="model file")
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--layer", type=int, help="ReLU layer to capture (default: last)")
    p.add_argument("--patterns", help="pattern file instead of --model/--data")
    p.add_argument(
        "--method",
        choices=[METHOD_LOG_BOUND, *BASELINE_METHODS],
        default=METHOD_LOG_BOUND,
    )
    p.add_argument("--rank", action="store_true", help="add rank column (1 = most reliable)")
    p.add_argument("--out", required=True, help="scores CSV to write")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", parents=[common], help="grid-search rho and delta")
    p.add_argument("--model", required=True)
    p.add_argument("--train-data", required=True, help="dataset CSV to fit on")
    p.add_argument("--val-data", required=True, help="dataset CSV for selection")
    p.add_argument("--layer", type=int, help="ReLU layer to capture (default: last)")
    p.add_argument(
        "--rhos",
        type=lambda t: _parse_float_list(t, _parse_rho),
        default=DEFAULT_RHOS,
        help="comma-separated rho grid",
    )
    p.add_argument(
        "--deltas",
        type=lambda t: _parse_float_list(t, _parse_delta),
        default=DEFAULT_DELTAS,
        help="comma-separated delta grid",
    )
    p.add_argument("--metric", choices=["aucea", "auroc"], default="aucea")
    p.add_argument("--n-thresholds", type=int, default=evaluation.DEFAULT_N_THRESHOLDS)
    p.add_argument("--best-out", help="also write the scorer for the selected cell")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", parents=[common], help="score a 2-D grid")
    p.add_argument("--scorer", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, help="ReLU layer to capture (default: last)")
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--x1", type=float, required=True)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--y1", type=float, required=True)
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--out", required=True, help="grid CSV to write")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", parents=[common], help="compare methods' score CSVs")
    p.add_argument(
        "--scores",
        action="append",
        default=[],
        metavar="NAME=PATH",
        help="may be given multiple times",
    )
    p.add_argument("--n-thresholds", type=int, default=evaluation.DEFAULT_N_THRESHOLDS)
    p.add_argument("--out", required=True, help="summary CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-patterns", parents=[common], help="write a pattern file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layer", type=int, help="ReLU layer to capture (default: last)")
    p.add_argument("--out", required=True, help="pattern file to write")
    p.set_defaults(func=cmd_export_patterns)

    p = sub.add_parser("serve", parents=[common], help="run the scoring HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument(
        "--preload",
        action="append",
        default=[],
        metavar="NAME=SCORERFILE",
        help="scorers to load at startup; may be repeated",
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
