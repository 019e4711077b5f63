"""Segmentation metrics: confusion counts, DICE, threshold sweeps, rater fusion.

Ratios with a zero denominator are reported as ``None`` ("undefined"), never
silently as 0, so that summary statistics are not corrupted.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from statistics import median

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    sensitivity: float
    specificity: float
    ppv: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    patient_id: str = ""

    def as_row(self):
        def cell(v):
            return "undefined" if v is None else repr(float(v))

        return [
            self.patient_id,
            repr(float(self.threshold)),
            cell(self.dice),
            cell(self.sensitivity),
            cell(self.specificity),
            cell(self.ppv),
            self.tp,
            self.fp,
            self.tn,
            self.fn,
        ]


def _ratio(num, den):
    return None if den == 0 else num / den


def confusion_metrics(pred, ref, threshold=0.5, eval_mask=None, patient_id=""):
    """Confusion counts and the derived metrics over the evaluation voxels.

    ``pred`` and ``ref`` are aligned binary masks (nonzero = positive);
    ``eval_mask`` restricts the evaluation (e.g. to brain voxels). DICE is
    2TP/(2TP+FP+FN); undefined ratios come back as None.
    """
    pred = np.asarray(pred) != 0
    ref = np.asarray(ref) != 0
    if pred.shape != ref.shape:
        raise DataError(f"misaligned masks: {pred.shape} vs {ref.shape}")
    if eval_mask is not None:
        keep = np.asarray(eval_mask) != 0
        if keep.shape != pred.shape:
            raise DataError(f"misaligned masks: {keep.shape} vs {pred.shape}")
        pred = pred[keep]
        ref = ref[keep]
    if pred.size == 0:
        raise DataError("no evaluation voxels")
    tp = int(np.sum(pred & ref))
    fp = int(np.sum(pred & ~ref))
    tn = int(np.sum(~pred & ~ref))
    fn = int(np.sum(~pred & ref))
    return MetricsReport(
        dice=_ratio(2 * tp, 2 * tp + fp + fn),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        ppv=_ratio(tp, tp + fp),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
        patient_id=patient_id,
    )


@dataclass(frozen=True)
class SweepCurve:
    """Metric values over a strictly increasing threshold grid."""

    kind: str  # "roc" or "dice"
    thresholds: np.ndarray
    values: dict  # "tpr"/"fpr" arrays for roc, "dice" list for dice
    auc: float = None

    def rows(self):
        if self.kind == "roc":
            for t, tpr, fpr in zip(self.thresholds, self.values["tpr"], self.values["fpr"]):
                yield [repr(float(t)), repr(float(tpr)), repr(float(fpr))]
        else:
            for t, v in zip(self.thresholds, self.values["dice"]):
                yield [repr(float(t)), "undefined" if v is None else repr(float(v))]


def default_threshold_grid(n=101):
    return np.linspace(0.0, 1.0, n)


def sweep(scores, ref, thresholds=None, kind="roc", eval_mask=None):
    """Evaluate ``label = score >= t`` over a threshold grid.

    For ``kind="roc"`` the curve carries TPR/FPR per threshold plus the
    trapezoidal AUC (with (0,0)/(1,1) anchor points); a reference that is all
    positive or all negative has no ROC and raises :class:`DataError`. For
    ``kind="dice"`` the curve carries the DICE value per threshold (None
    where undefined).
    """
    if kind not in ("roc", "dice"):
        raise DataError(f"unknown sweep kind: {kind!r}")
    scores = np.asarray(scores, dtype=np.float64)
    ref = np.asarray(ref) != 0
    if scores.shape != ref.shape:
        raise DataError(f"misaligned masks: {scores.shape} vs {ref.shape}")
    if eval_mask is not None:
        keep = np.asarray(eval_mask) != 0
        scores = scores[keep]
        ref = ref[keep]
    if scores.size == 0:
        raise DataError("no evaluation voxels")
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size < 1 or np.any(np.diff(thresholds) <= 0):
        raise DataError("thresholds must be strictly increasing")
    n_pos = int(ref.sum())
    n_neg = int(ref.size - n_pos)
    if kind == "roc" and (n_pos == 0 or n_neg == 0):
        raise DataError("ROC undefined: reference is single-class")
    if kind == "roc":
        tpr = np.empty(thresholds.size)
        fpr = np.empty(thresholds.size)
        for i, t in enumerate(thresholds):
            pred = scores >= t
            tpr[i] = np.sum(pred & ref) / n_pos
            fpr[i] = np.sum(pred & ~ref) / n_neg
        # anchor the curve at its ideal endpoints before integrating
        pts = sorted(set(zip(fpr, tpr)) | {(0.0, 0.0), (1.0, 1.0)})
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        auc = float(np.trapezoid(ys, xs))
        return SweepCurve(kind="roc", thresholds=thresholds, values={"tpr": tpr, "fpr": fpr}, auc=auc)
    dices = []
    for t in thresholds:
        pred = scores >= t
        tp = int(np.sum(pred & ref))
        fp = int(np.sum(pred & ~ref))
        fn = int(np.sum(~pred & ref))
        dices.append(_ratio(2 * tp, 2 * tp + fp + fn))
    return SweepCurve(kind="dice", thresholds=thresholds, values={"dice": dices})


def rater_majority_vote(masks):
    """Per-voxel strict majority over >= 2 aligned binary masks.

    A voxel is positive iff strictly more than half the raters mark it;
    exact ties (even rater count) resolve to negative.
    """
    masks = [np.asarray(m) != 0 for m in masks]
    if len(masks) < 2:
        raise DataError("majority vote needs at least 2 masks")
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise DataError(f"misaligned masks: {m.shape} vs {shape}")
    votes = np.sum(masks, axis=0)
    return (votes * 2 > len(masks)).astype(np.uint8)


SUMMARY_METRICS = ("dice", "sensitivity", "specificity", "ppv")


def loocv_summary(reports):
    """Mean / median / sample std per metric over per-patient reports.

    Undefined metric values are excluded; each metric's summary records how
    many patients contributed. Requires >= 2 reports.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise DataError("need at least 2 patients to summarize")
    summary = {"n_patients": len(reports)}
    for metric in SUMMARY_METRICS:
        values = [getattr(r, metric) for r in reports]
        defined = [v for v in values if v is not None]
        if not defined:
            summary[metric] = {"mean": None, "median": None, "std": None, "n": 0}
            continue
        arr = np.asarray(defined, dtype=np.float64)
        summary[metric] = {
            "mean": float(arr.mean()),
            "median": float(median(defined)),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "n": int(arr.size),
        }
    return summary


REPORT_HEADER = [
    "patient_id", "threshold", "dice", "sensitivity",
    "specificity", "ppv", "tp", "fp", "tn", "fn",
]


def write_reports_csv(reports, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for report in reports:
            writer.writerow(report.as_row())
    return path


def write_curve_csv(curve, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["threshold", "tpr", "fpr"] if curve.kind == "roc" else ["threshold", "dice"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in curve.rows():
            writer.writerow(row)
    return path


def write_summary_json(summary, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
