"""Leave-one-patient-out experiment harness.

Binds the data model, weight estimation, the weighted forest, and the
metrics into the five training schemes:

    LCA            all ground-truth-labeled voxels, unit weights
    LCA_sampled    per-patient seeded uniform subsample of labeled voxels
    DALCA_sampled  the same subsample, reweighted against the whole image
    LSA            sparse-annotation (SUR) voxels, unit weights
    DALSA          SUR voxels with per-patient importance weights

Each fold holds one patient out, assembles training rows from the others,
trains one forest, predicts the held-out patient's in-mask voxels, and
evaluates against the fused two-class ground truth. Folds are isolated: a
failing fold is recorded and the run continues. Everything is deterministic
in (config, data) at any thread count.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DalsaError, DataError, UsageError
from .forest import ForestParams, save_forest, splitmix64, train_forest, vote_counts
from .labels import TUMOROUS, LabelScheme, fuse_labels
from .metrics import (
    confusion_metrics,
    default_threshold_grid,
    loocv_summary,
    sweep,
    write_curve_csv,
    write_reports_csv,
    write_summary_json,
)
from .reweight import compute_patient_weights, estimate_weights, fit_density_ratio
from .samples import concat_tables, extract_features
from .volume import load_patient

METHODS = ("LCA", "LCA_sampled", "DALCA_sampled", "LSA", "DALSA")
_NEEDS_LABELS = ("LCA", "LCA_sampled", "DALCA_sampled")
_NEEDS_SUR = ("LSA", "DALSA")


@dataclass(frozen=True)
class RunConfig:
    """Everything a LOOCV run depends on, seeds included."""

    dataset_root: str = None
    patients: tuple = ()
    method: str = "DALSA"
    label_mode: str = "two_class"
    fusion_stage: str = "before_training"
    n_trees: int = 100
    mtry: int = None
    max_depth: int = 4
    min_leaf: int = 1
    bootstrap: bool = True
    lam: float = 1.0
    c: float = 1.0
    ridge: float = 1e-6
    tol: float = 1e-8
    max_iter: int = 100
    sample_ratio: float = 0.005
    threshold: float = 0.5
    sweep_points: int = 101
    seed: int = 0
    threads: int = 1
    out_dir: str = None
    save_models: bool = False
    save_predictions: bool = False
    weight_sum_tolerance: float = 0.01
    # annotation effort is reported, never measured: it happened offline
    labeling_seconds: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.sample_ratio <= 1.0:
            raise UsageError(f"sample_ratio must lie in (0, 1], got {self.sample_ratio}")
        if not 0.0 < self.threshold < 1.0:
            raise UsageError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.threads < 1:
            raise UsageError(f"threads must be >= 1, got {self.threads}")
        LabelScheme(self.label_mode, self.fusion_stage)  # validates both
        object.__setattr__(self, "patients", tuple(self.patients))

    @property
    def scheme(self):
        return LabelScheme(self.label_mode, self.fusion_stage)

    def forest_params(self, seed):
        return ForestParams(
            n_trees=self.n_trees,
            mtry=self.mtry,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            bootstrap=self.bootstrap,
            seed=seed,
        )

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out["lambda" if f.name == "lam" else f.name] = (
                list(value) if isinstance(value, tuple) else value
            )
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _patient_seed(master_seed, patient_id, purpose):
    digest = hashlib.blake2b(f"{purpose}:{patient_id}".encode(), digest_size=8).digest()
    return splitmix64(master_seed, int.from_bytes(digest, "little"))


def _volume_checksum(volume):
    h = hashlib.sha256()
    h.update(np.asarray(volume.dims, dtype=np.int64).tobytes())
    h.update(volume.channels.tobytes())
    h.update(volume.brain_mask.tobytes())
    for raster in (volume.labels, volume.sur_labels):
        h.update(b"-" if raster is None else raster.tobytes())
    return h.hexdigest()


def _check_method_inputs(method, volume):
    if method in _NEEDS_LABELS and volume.labels is None:
        raise DataError(f"method {method} needs full label rasters; patient "
                        f"{volume.patient_id!r} has none")
    if method in _NEEDS_SUR and volume.sur_labels is None:
        raise DataError(f"method {method} needs SUR rasters; patient "
                        f"{volume.patient_id!r} has none")


def training_rows_for_patient(volume, config):
    """One training patient's rows (and weights) under the configured method."""
    method = config.method
    _check_method_inputs(method, volume)
    if method in _NEEDS_SUR:
        table = extract_features(volume, "labeled_voxels_only", label_source="sur_labels")
        if method == "DALSA":
            report = compute_patient_weights(
                volume,
                lam=config.lam,
                c=config.c,
                ridge=config.ridge,
                tol=config.tol,
                max_iter=config.max_iter,
                sum_tolerance=config.weight_sum_tolerance,
            )
            table = table.with_weights(report.weights)
        return table
    table = extract_features(volume, "labeled_voxels_only", label_source="labels")
    if method == "LCA":
        return table
    # seeded per-patient subsample; indices sorted so ratio 1 is the identity
    rng = np.random.default_rng(_patient_seed(config.seed, volume.patient_id, "sample"))
    k = max(1, int(round(config.sample_ratio * len(table))))
    chosen = np.sort(rng.choice(len(table), size=k, replace=False))
    table = table.subset(chosen)
    if method == "DALCA_sampled":
        all_voxels = extract_features(volume, "all_brain_voxels")
        model, _, _ = fit_density_ratio(
            table, all_voxels,
            lam=config.lam, c=config.c,
            ridge=config.ridge, tol=config.tol, max_iter=config.max_iter,
        )
        table = table.with_weights(estimate_weights(model, table))
    return table


def _positive_score(forest, counts):
    """Fraction of trees voting any class that fuses to tumorous."""
    fused = fuse_labels(forest.class_alphabet, "two_class")
    positive_cols = np.nonzero(fused == TUMOROUS)[0]
    if positive_cols.size == 0:
        return np.zeros(counts.shape[0])
    return counts[:, positive_cols].sum(axis=1) / forest.params.n_trees


def predict_patient(forest, volume, scheme, threshold=0.5):
    """Predict one patient's in-mask voxels.

    Returns ``(pred_labels, scores, voxel_indices)`` where ``scores`` is the
    tumorous vote fraction. A two-class forest thresholds the score; a
    multi-class forest takes the plurality vote and, for an
    ``after_prediction`` scheme, fuses the voted labels.
    """
    table = extract_features(volume, "all_brain_voxels")
    counts = vote_counts(forest, table.features)
    scores = _positive_score(forest, counts)
    alphabet = forest.class_alphabet
    if alphabet.size <= 2:
        negatives = [c for c in alphabet if fuse_labels([c], "two_class")[0] != TUMOROUS]
        negative = int(negatives[0]) if negatives else 0
        pred = np.where(scores >= threshold, TUMOROUS, negative).astype(np.int64)
    else:
        pred = alphabet[np.argmax(counts, axis=1)].astype(np.int64)
        if scheme.fusion_stage == "after_prediction":
            pred = fuse_labels(pred, scheme)
    return pred, scores, table.voxel_indices


@dataclass
class FoldResult:
    patient_id: str
    report: object = None
    error: str = None
    pred_labels: np.ndarray = None
    scores: np.ndarray = None
    voxel_indices: np.ndarray = None
    roc: object = None
    dice_curve: object = None
    forest_seed: int = None
    timings: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.error is None


def _load_volumes(config):
    if config.dataset_root is None:
        raise UsageError("no dataset_root given and no volumes supplied")
    root = Path(config.dataset_root)
    volumes = {}
    for pid in config.patients:
        volumes[pid] = load_patient(root / pid)
    return volumes


def run_fold(heldout_id, volumes, config):
    """Train on everyone but ``heldout_id`` and evaluate on them."""
    result = FoldResult(patient_id=heldout_id)
    result.forest_seed = _patient_seed(config.seed, heldout_id, "forest")
    timings = result.timings
    try:
        t0 = time.perf_counter()
        others = [volumes[pid] for pid in config.patients if pid != heldout_id]
        tables = [training_rows_for_patient(v, config) for v in others]
        training = concat_tables(tables)
        scheme = config.scheme
        if scheme.fusion_stage == "before_training":
            training = training.with_labels(fuse_labels(training.labels, scheme))
        timings["assemble"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        forest = train_forest(
            training, config.forest_params(result.forest_seed), threads=config.threads
        )
        timings["train"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        heldout = volumes[heldout_id]
        pred, scores, voxel_indices = predict_patient(
            forest, heldout, scheme, threshold=config.threshold
        )
        timings["predict"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        if heldout.labels is None:
            raise DataError(f"held-out patient {heldout_id!r} has no ground-truth labels")
        truth = heldout.labels[voxel_indices]
        ref_binary = fuse_labels(truth, "two_class") == TUMOROUS
        pred_binary = fuse_labels(pred, "two_class") == TUMOROUS
        result.report = confusion_metrics(
            pred_binary, ref_binary, threshold=config.threshold, patient_id=heldout_id
        )
        grid = default_threshold_grid(config.sweep_points)
        result.dice_curve = sweep(scores, ref_binary, thresholds=grid, kind="dice")
        if 0 < ref_binary.sum() < ref_binary.size:
            result.roc = sweep(scores, ref_binary, thresholds=grid, kind="roc")
        timings["evaluate"] = time.perf_counter() - t0
        result.pred_labels = pred
        result.scores = scores
        result.voxel_indices = voxel_indices
        result._forest = forest
    except DalsaError as exc:
        result.error = str(exc)
    return result


@dataclass
class LoocvResult:
    folds: list
    summary: dict
    manifest: dict

    def fold(self, patient_id):
        for f in self.folds:
            if f.patient_id == patient_id:
                return f
        raise KeyError(patient_id)


def run_loocv(config, volumes=None):
    """Leave-one-patient-out evaluation per the config; returns LoocvResult.

    ``volumes`` may supply preloaded PatientVolumes keyed by patient id;
    otherwise patients are loaded from ``config.dataset_root``. With
    ``config.out_dir`` set, reports, curves, the summary, and the run
    manifest are written there (plus predictions/models when requested).
    """
    started = time.perf_counter()
    if volumes is None:
        volumes = _load_volumes(config)
    missing = [pid for pid in config.patients if pid not in volumes]
    if missing:
        raise DataError(f"patients not found: {missing}")
    if len(config.patients) < 2:
        raise DataError("leave-one-patient-out needs at least 2 patients")
    for pid in config.patients:
        _check_method_inputs(config.method, volumes[pid])

    folds = [run_fold(pid, volumes, config) for pid in config.patients]
    reports = [f.report for f in folds if f.ok]
    summary = loocv_summary(reports) if len(reports) >= 2 else {"n_patients": len(reports)}
    summary["method"] = config.method
    summary["lambda"] = config.lam

    manifest = {
        "config": config.to_dict(),
        "versions": _versions(),
        "fold_seeds": {f.patient_id: f.forest_seed for f in folds},
        "input_checksums": {pid: _volume_checksum(volumes[pid]) for pid in config.patients},
        "folds": [
            {"patient_id": f.patient_id, "status": "ok" if f.ok else "error",
             "error": f.error, "timings": f.timings}
            for f in folds
        ],
        "total_seconds": time.perf_counter() - started,
    }
    result = LoocvResult(folds=folds, summary=summary, manifest=manifest)
    if config.out_dir:
        _write_run(result, config, volumes)
    return result


def _versions():
    import platform

    import scipy

    return {
        "dalsa": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _write_run(result, config, volumes):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv([f.report for f in result.folds if f.ok], out / "reports.csv")
    write_summary_json(result.summary, out / "summary.json")
    for f in result.folds:
        if not f.ok:
            continue
        if f.roc is not None:
            write_curve_csv(f.roc, out / "curves" / f"{f.patient_id}_roc.csv")
        write_curve_csv(f.dice_curve, out / "curves" / f"{f.patient_id}_dice.csv")
        if config.save_predictions:
            pred_dir = out / "predictions"
            pred_dir.mkdir(parents=True, exist_ok=True)
            volume = volumes[f.patient_id]
            labels = np.zeros(volume.n_voxels, dtype=np.uint8)
            labels[f.voxel_indices] = f.pred_labels
            labels.tofile(pred_dir / f"{f.patient_id}_labels.u8")
            scores = np.zeros(volume.n_voxels, dtype=np.float32)
            scores[f.voxel_indices] = f.scores
            scores.tofile(pred_dir / f"{f.patient_id}_scores.f32")
        if config.save_models and getattr(f, "_forest", None) is not None:
            save_forest(f._forest, out / "models" / f"{f.patient_id}_forest.json")
    (out / "run_manifest.json").write_text(
        json.dumps(result.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def run_lambda_sweep(config, lambdas, volumes=None):
    """One LOOCV per relaxation value; fixed seed and forest params.

    Returns rows ``{"lambda", "mean_dice", "stderr_dice", "n"}``.
    """
    if volumes is None:
        volumes = _load_volumes(config)
    rows = []
    for lam in lambdas:
        run = run_loocv(replace(config, lam=float(lam), out_dir=None), volumes=volumes)
        dices = [f.report.dice for f in run.folds if f.ok and f.report.dice is not None]
        arr = np.asarray(dices, dtype=np.float64)
        rows.append({
            "lambda": float(lam),
            "mean_dice": float(arr.mean()) if arr.size else None,
            "stderr_dice": float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else None,
            "n": int(arr.size),
        })
    return rows


def run_depth_sweep(config, depths, volumes=None):
    """One LOOCV per max_depth; reports the best depth (ties to the lowest)."""
    if volumes is None:
        volumes = _load_volumes(config)
    depths = sorted(int(d) for d in depths)
    rows = []
    for depth in depths:
        run = run_loocv(replace(config, max_depth=depth, out_dir=None), volumes=volumes)
        dices = [f.report.dice for f in run.folds if f.ok and f.report.dice is not None]
        arr = np.asarray(dices, dtype=np.float64)
        rows.append({
            "depth": depth,
            "mean_dice": float(arr.mean()) if arr.size else None,
            "n": int(arr.size),
        })
    means = [(-1.0 if r["mean_dice"] is None else r["mean_dice"]) for r in rows]
    best = rows[int(np.argmax(means))]["depth"] if rows else None
    return rows, best
