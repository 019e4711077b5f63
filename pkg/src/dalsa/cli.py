"""Command-line interface.

Subcommands: normalize, weights, train, predict, eval, sweep-roc,
sweep-dice, loocv, sweep-lambda, sweep-depth, synth (toy | gaussian),
model (show). Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import DalsaError, DataError, UsageError
from .forest import load_forest, save_forest, train_forest
from .labels import TUMOROUS, fuse_labels
from .metrics import (
    confusion_metrics,
    default_threshold_grid,
    sweep,
    write_curve_csv,
    write_reports_csv,
    write_summary_json,
)
from .pipeline import (
    METHODS,
    RunConfig,
    predict_patient,
    run_depth_sweep,
    run_lambda_sweep,
    run_loocv,
    training_rows_for_patient,
)
from .reweight import compute_patient_weights, write_weight_report
from .samples import concat_tables, write_sample_csv
from .synthetic import GaussianShiftConfig, ToyConfig, make_gaussian_patient, make_gaussian_shift, make_toy
from .volume import load_patient, normalize_volume, save_patient


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_options(parser):
    parser.add_argument("--dataset", help="dataset root containing one directory per patient")
    parser.add_argument("--patients", help="comma-separated patient ids")
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--label-mode", choices=("two_class", "five_class"))
    parser.add_argument("--fusion-stage", choices=("before_training", "after_prediction"))
    parser.add_argument("--trees", type=int, dest="n_trees")
    parser.add_argument("--mtry", type=int)
    parser.add_argument("--depth", type=int, dest="max_depth")
    parser.add_argument("--min-leaf", type=int)
    parser.add_argument("--no-bootstrap", action="store_true")
    parser.add_argument("--lambda", type=float, dest="lam")
    parser.add_argument("--c", type=float)
    parser.add_argument("--ridge", type=float)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--sample-ratio", type=float)
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--sweep-points", type=int)
    parser.add_argument("--labeling-seconds", type=float,
                        help="annotation time to record in the run manifest")


def _run_config(args):
    base = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"missing file: {path}")
        base = json.loads(path.read_text(encoding="utf-8"))
    overrides = {
        "dataset_root": args.dataset,
        "method": args.method,
        "label_mode": args.label_mode,
        "fusion_stage": args.fusion_stage,
        "n_trees": args.n_trees,
        "mtry": args.mtry,
        "max_depth": args.max_depth,
        "min_leaf": args.min_leaf,
        "lam": args.lam,
        "c": args.c,
        "ridge": args.ridge,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "sample_ratio": args.sample_ratio,
        "threshold": args.threshold,
        "sweep_points": args.sweep_points,
        "labeling_seconds": args.labeling_seconds,
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out,
    }
    if args.patients:
        overrides["patients"] = tuple(p for p in args.patients.split(",") if p)
    if args.no_bootstrap:
        overrides["bootstrap"] = False
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if getattr(args, "save_models", False):
        base["save_models"] = True
    if getattr(args, "save_predictions", False):
        base["save_predictions"] = True
    config = RunConfig.from_dict(base)
    if not config.patients:
        raise UsageError("no patients given (use --patients or --config)")
    return config


def _cmd_normalize(args):
    volume = load_patient(args.patient)
    normalized = normalize_volume(volume, bins=args.bins)
    if not args.out:
        raise UsageError("normalize needs --out DIR")
    save_patient(normalized, args.out)
    print(f"normalized {volume.n_channels} channels -> {args.out}")
    return 0


def _cmd_weights(args):
    volume = load_patient(args.patient)
    report = compute_patient_weights(
        volume,
        lam=args.lam if args.lam is not None else 1.0,
        c=args.c if args.c is not None else 1.0,
        ridge=args.ridge if args.ridge is not None else 1e-6,
        tol=args.tol if args.tol is not None else 1e-8,
        max_iter=args.max_iter if args.max_iter is not None else 100,
        sum_tolerance=args.sum_tolerance,
    )
    if not args.out:
        raise UsageError("weights needs --out DIR")
    write_weight_report(report, args.out, raster_size=volume.n_voxels if args.raster else None)
    print(
        f"patient {report.patient_id}: n_train={report.n_train} n_test={report.n_test} "
        f"sum_weights={report.sum_weights:.6g} converged={report.converged}"
    )
    return 0


def _cmd_train(args):
    config = _run_config(args)
    if config.dataset_root is None:
        raise UsageError("train needs --dataset")
    root = Path(config.dataset_root)
    tables = []
    for pid in config.patients:
        tables.append(training_rows_for_patient(load_patient(root / pid), config))
    training = concat_tables(tables)
    if config.scheme.fusion_stage == "before_training":
        training = training.with_labels(fuse_labels(training.labels, config.scheme))
    forest = train_forest(training, config.forest_params(config.seed), threads=config.threads)
    if not args.out:
        raise UsageError("train needs --out FILE")
    save_forest(forest, args.out)
    print(f"trained {forest.params.n_trees} trees on {len(training)} rows -> {args.out}")
    return 0


def _cmd_predict(args):
    forest = load_forest(args.model)
    volume = load_patient(args.patient)
    config = _run_config_lenient(args)
    pred, scores, voxel_indices = predict_patient(
        forest, volume, config.scheme, threshold=config.threshold
    )
    if not args.out:
        raise UsageError("predict needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = np.zeros(volume.n_voxels, dtype=np.uint8)
    labels[voxel_indices] = pred
    labels.tofile(out / "pred_labels.u8")
    raster = np.zeros(volume.n_voxels, dtype=np.float32)
    raster[voxel_indices] = scores
    raster.tofile(out / "pred_scores.f32")
    (out / "prediction.json").write_text(
        json.dumps(
            {
                "patient_id": volume.patient_id,
                "dims": list(volume.dims),
                "n_voxels_predicted": int(voxel_indices.size),
                "threshold": config.threshold,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"predicted {voxel_indices.size} voxels -> {out}")
    return 0


def _run_config_lenient(args):
    # predict/eval/sweeps only need scheme + threshold; dodge patient checks
    base = {
        "patients": ("_",),
        "label_mode": args.label_mode or "two_class",
        "fusion_stage": args.fusion_stage or "before_training",
    }
    if getattr(args, "threshold", None) is not None:
        base["threshold"] = args.threshold
    return RunConfig.from_dict(base)


def _load_prediction(pred_dir, volume):
    pred_dir = Path(pred_dir)
    scores_path = pred_dir / "pred_scores.f32"
    if not scores_path.is_file():
        raise DataError(f"missing file: {scores_path}")
    scores = np.fromfile(scores_path, dtype=np.float32).astype(np.float64)
    if scores.size != volume.n_voxels:
        raise DataError(
            f"raster size mismatch: scores hold {scores.size} voxels, "
            f"volume has {volume.n_voxels}"
        )
    return scores


def _binary_reference(volume):
    if volume.labels is None:
        raise DataError(f"patient {volume.patient_id!r} has no ground-truth labels")
    return fuse_labels(volume.labels, "two_class") == TUMOROUS


def _cmd_eval(args):
    volume = load_patient(args.patient)
    scores = _load_prediction(args.pred, volume)
    threshold = args.threshold if args.threshold is not None else 0.5
    mask = volume.brain_mask != 0
    report = confusion_metrics(
        scores >= threshold,
        _binary_reference(volume),
        threshold=threshold,
        eval_mask=mask,
        patient_id=volume.patient_id,
    )
    if args.out:
        write_reports_csv([report], args.out)
    row = report.as_row()
    print(
        f"patient {volume.patient_id}: dice={row[2]} sensitivity={row[3]} "
        f"specificity={row[4]} ppv={row[5]}"
    )
    return 0


def _cmd_sweep_curve(args, kind):
    volume = load_patient(args.patient)
    scores = _load_prediction(args.pred, volume)
    mask = volume.brain_mask != 0
    grid = default_threshold_grid(args.points)
    curve = sweep(scores, _binary_reference(volume), thresholds=grid, kind=kind, eval_mask=mask)
    if not args.out:
        raise UsageError(f"sweep-{kind} needs --out FILE")
    write_curve_csv(curve, args.out)
    if kind == "roc":
        print(f"AUC = {curve.auc:.6f} -> {args.out}")
    else:
        defined = [v for v in curve.values["dice"] if v is not None]
        print(f"max DICE = {max(defined):.6f} -> {args.out}")
    return 0


def _cmd_loocv(args):
    config = _run_config(args)
    result = run_loocv(config)
    for fold in result.folds:
        if fold.ok:
            print(f"fold {fold.patient_id}: dice={fold.report.dice}")
        else:
            print(f"fold {fold.patient_id}: ERROR {fold.error}")
    if "dice" in result.summary:
        d = result.summary["dice"]
        print(f"dice over {d['n']} patients: mean={d['mean']:.4f} median={d['median']:.4f}")
    if args.summary_json:
        write_summary_json(result.summary, args.summary_json)
    return 0


def _parse_grid(text, cast):
    try:
        values = [cast(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc
    if not values:
        raise UsageError(f"empty grid: {text!r}")
    return values


def _cmd_sweep_lambda(args):
    config = _run_config(args)
    lambdas = _parse_grid(args.lambdas, float)
    rows = run_lambda_sweep(config, lambdas)
    out = args.out or "lambda_sweep.csv"
    path = Path(out)
    if path.suffix != ".csv":
        path = path / "lambda_sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "mean_dice", "stderr_dice", "n"])
        for row in rows:
            writer.writerow([
                repr(row["lambda"]),
                "undefined" if row["mean_dice"] is None else repr(row["mean_dice"]),
                "undefined" if row["stderr_dice"] is None else repr(row["stderr_dice"]),
                row["n"],
            ])
    for row in rows:
        print(f"lambda={row['lambda']}: mean_dice={row['mean_dice']}")
    return 0


def _cmd_sweep_depth(args):
    config = _run_config(args)
    depths = _parse_grid(args.depths, int)
    rows, best = run_depth_sweep(config, depths)
    out = args.out or "depth_sweep.csv"
    path = Path(out)
    if path.suffix != ".csv":
        path = path / "depth_sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["depth", "mean_dice", "n"])
        for row in rows:
            writer.writerow([
                row["depth"],
                "undefined" if row["mean_dice"] is None else repr(row["mean_dice"]),
                row["n"],
            ])
    for row in rows:
        print(f"depth={row['depth']}: mean_dice={row['mean_dice']}")
    print(f"best depth: {best}")
    return 0


def _cmd_synth(args):
    if not args.out:
        raise UsageError("synth needs --out DIR")
    out = Path(args.out)
    if args.generator == "toy":
        volume = make_toy(ToyConfig(encode_indicators=not args.raw_intensity))
        save_patient(volume, out)
        print(f"toy patient ({volume.n_voxels} voxels, d={volume.n_channels}) -> {out}")
        return 0
    config = GaussianShiftConfig(
        d=args.d,
        train_mean=args.train_mean,
        train_std=args.train_std,
        test_mean=args.test_mean,
        test_std=args.test_std,
        class_mean_a=args.class_mean_a,
        class_mean_b=args.class_mean_b,
        class_std=args.class_std,
        n_train=args.n_train,
        n_test=args.n_test,
        seed=args.seed if args.seed is not None else 0,
    )
    volume = make_gaussian_patient(config)
    save_patient(volume, out)
    train, test = make_gaussian_shift(config)
    write_sample_csv(train, out / "train.csv")
    write_sample_csv(test, out / "test.csv")
    print(f"gaussian patient {volume.patient_id} ({volume.n_voxels} voxels) -> {out}")
    return 0


def _cmd_model_show(args):
    forest = load_forest(args.model)
    p = forest.params
    print(f"trees: {p.n_trees}")
    print(f"mtry: {'auto' if p.mtry is None else p.mtry}")
    print(f"max_depth: {p.max_depth} (deepest tree: {forest.max_depth_used()})")
    print(f"min_leaf: {p.min_leaf}")
    print(f"bootstrap: {p.bootstrap}")
    print(f"seed: {p.seed}")
    print(f"features: {forest.n_features}")
    print(f"classes: {list(int(c) for c in forest.class_alphabet)}")
    print(f"nodes: {forest.n_nodes()}")
    return 0


def _global_flags(parser, suppress=False):
    kw = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    parser.add_argument("--seed", type=int, **kw)
    parser.add_argument("--threads", type=int, **kw)
    parser.add_argument("--config", help="JSON file mirroring the run config", **kw)
    parser.add_argument("--out", help="output file or directory", **kw)


def build_parser():
    parser = _Parser(prog="dalsa", description=__doc__)
    _global_flags(parser)
    # accepted before or after the subcommand; SUPPRESS keeps the subparser
    # from clobbering values parsed at the top level
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser)

    def sub_add_parser(name, **kw):
        return subparsers.add_parser(name, parents=[common], **kw)

    sub = argparse.Namespace(add_parser=sub_add_parser)

    p = sub.add_parser("normalize", help="mode-normalize every channel of a patient")
    p.add_argument("--patient", required=True)
    p.add_argument("--bins", type=int, default=256)

    p = sub.add_parser("weights", help="estimate importance weights for one patient")
    p.add_argument("--patient", required=True)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--c", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--sum-tolerance", type=float, default=0.01)
    p.add_argument("--raster", action="store_true", help="also write a weight raster")

    p = sub.add_parser("train", help="train one forest on the listed patients")
    _add_run_options(p)

    p = sub.add_parser("predict", help="predict a patient's in-mask voxels")
    p.add_argument("--model", required=True)
    p.add_argument("--patient", required=True)
    p.add_argument("--label-mode", choices=("two_class", "five_class"))
    p.add_argument("--fusion-stage", choices=("before_training", "after_prediction"))
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    p.add_argument("--patient", required=True)
    p.add_argument("--pred", required=True, help="directory written by `predict`")
    p.add_argument("--threshold", type=float)

    for kind in ("roc", "dice"):
        p = sub.add_parser(f"sweep-{kind}", help=f"{kind} curve over a threshold grid")
        p.add_argument("--patient", required=True)
        p.add_argument("--pred", required=True)
        p.add_argument("--points", type=int, default=101)

    p = sub.add_parser("loocv", help="leave-one-patient-out evaluation")
    _add_run_options(p)
    p.add_argument("--summary-json", help="also write the summary to this file")
    p.add_argument("--save-models", action="store_true")
    p.add_argument("--save-predictions", action="store_true")

    p = sub.add_parser("sweep-lambda", help="LOOCV over a relaxation grid")
    _add_run_options(p)
    p.add_argument("--lambdas", required=True, help="comma-separated values in [0, 1]")

    p = sub.add_parser("sweep-depth", help="LOOCV over a tree-depth grid")
    _add_run_options(p)
    p.add_argument("--depths", required=True, help="comma-separated depths")

    p = sub.add_parser("synth", help="generate synthetic datasets")
    p.add_argument("generator", choices=("toy", "gaussian"))
    p.add_argument("--raw-intensity", action="store_true",
                   help="toy: single intensity channel instead of indicators")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--train-mean", type=float, default=0.0)
    p.add_argument("--train-std", type=float, default=1.0)
    p.add_argument("--test-mean", type=float, default=1.0)
    p.add_argument("--test-std", type=float, default=1.0)
    p.add_argument("--class-mean-a", type=float, default=-1.0)
    p.add_argument("--class-mean-b", type=float, default=1.0)
    p.add_argument("--class-std", type=float, default=1.0)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=1000)

    p = sub.add_parser("model", help="inspect saved models")
    p.add_argument("action", choices=("show",))
    p.add_argument("--model", required=True)

    return parser


_HANDLERS = {
    "normalize": _cmd_normalize,
    "weights": _cmd_weights,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "sweep-roc": lambda a: _cmd_sweep_curve(a, "roc"),
    "sweep-dice": lambda a: _cmd_sweep_curve(a, "dice"),
    "loocv": _cmd_loocv,
    "sweep-lambda": _cmd_sweep_lambda,
    "sweep-depth": _cmd_sweep_depth,
    "synth": _cmd_synth,
    "model": lambda a: _cmd_model_show(a),
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        return _HANDLERS[args.command](args)
    except DalsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
