"""Importance weights that correct the sparse-annotation sampling bias.

Per patient, a logistic regressor is fitted to distinguish annotated voxels
(z=1) from all in-mask voxels (z=0, so annotated voxels appear on both
sides). Writing the fitted log-odds as t(x), each annotated voxel receives

    w(x) = exp(lam * (ln(c) - t(x)))

which is the division-free form of c * (1 - p(z=1|x)) / p(z=1|x) raised to
the relaxation exponent ``lam``. ``lam = 0`` disables the correction;
``c`` rescales one patient's total training influence. For a converged fit
with ``lam = 1`` the weights over one patient's annotated voxels sum to
approximately ``c * n_test`` (exactly, for indicator features partitioning
the space).
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConvergenceWarning, DataError, NumericalError, WeightSumWarning
from .samples import extract_features

EXP_CLAMP = 700.0  # |exponent| bound: exp() stays finite in float64

DEFAULT_RIDGE = 1e-6
MAX_RIDGE = 1e-2
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100


def _readonly(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DensityRatioModel:
    """Fitted log-odds function plus the weighting constants.

    ``coef`` has length d+1 with the intercept first and applies to features
    standardized by ``feature_shift`` / ``feature_scale``.
    """

    coef: np.ndarray
    lam: float
    c: float
    feature_shift: np.ndarray
    feature_scale: np.ndarray
    iterations: int = 0
    deviance: float = float("nan")
    converged: bool = True

    def __post_init__(self):
        coef = np.ascontiguousarray(self.coef, dtype=np.float64)
        shift = np.ascontiguousarray(self.feature_shift, dtype=np.float64)
        scale = np.ascontiguousarray(self.feature_scale, dtype=np.float64)
        if coef.shape != (shift.size + 1,) or shift.shape != scale.shape:
            raise DataError("coef/shift/scale sizes are inconsistent")
        if not 0.0 <= self.lam <= 1.0:
            raise DataError(f"lam must lie in [0, 1], got {self.lam}")
        if not self.c > 0:
            raise DataError(f"c must be positive, got {self.c}")
        if scale.size and scale.min() <= 0:
            raise DataError("feature_scale entries must be positive")
        object.__setattr__(self, "coef", _readonly(coef))
        object.__setattr__(self, "feature_shift", _readonly(shift))
        object.__setattr__(self, "feature_scale", _readonly(scale))

    @property
    def n_features(self):
        return self.feature_shift.size

    def log_odds(self, features):
        """Fitted annotation log-odds t(x) for raw (unstandardized) features."""
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(
                f"feature-dimension mismatch: model expects {self.n_features}, got {X.shape[1]}"
            )
        Z = (X - self.feature_shift) / self.feature_scale
        return self.coef[0] + Z @ self.coef[1:]


def build_discrimination_set(sur, all_voxels):
    """Stack annotated rows (z=1) over all in-mask rows (z=0).

    Annotated voxels are deliberately present on both sides: the z=0 block is
    the whole in-mask population, annotations included. Returns
    ``(X, z, n_train, n_test)``.
    """
    if len(sur) == 0:
        raise DataError("empty annotation table")
    if sur.n_features != all_voxels.n_features:
        raise DataError(
            f"feature-dimension mismatch: {sur.n_features} vs {all_voxels.n_features}"
        )
    pids = set(sur.patient_ids) | set(all_voxels.patient_ids)
    if len(pids) > 1:
        raise DataError(f"discrimination set spans multiple patients: {sorted(pids)}")
    X = np.concatenate([sur.features, all_voxels.features])
    z = np.concatenate(
        [np.ones(len(sur), dtype=np.int8), np.zeros(len(all_voxels), dtype=np.int8)]
    )
    return X, z, len(sur), len(all_voxels)


def standardize_columns(X):
    """Column-wise shift/scale (mean, population std; constant columns scale 1)."""
    X = np.asarray(X, dtype=np.float64)
    shift = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    scale = X.std(axis=0) if X.shape[0] else np.ones(X.shape[1])
    scale = np.where(scale > 1e-12, scale, 1.0)
    return shift, scale


def _penalized_loglik(eta, z, coef, ridge):
    # log-likelihood via the stable softplus form, minus the ridge penalty
    loglik = float(np.sum(z * eta) - np.sum(np.logaddexp(0.0, eta)))
    return loglik - ridge * float(np.sum(coef[1:] ** 2))


def irls_fit(design, z, ridge=DEFAULT_RIDGE, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Fit logistic-regression coefficients by damped Newton iterations.

    ``design`` holds the (already standardized) feature columns; the
    intercept column is implicit. Maximizes the binomial log-likelihood minus
    ``ridge * sum(coef[1:]**2)`` (intercept unpenalized) until the gradient
    norm drops below ``tol`` or ``max_iter`` is hit. A singular Newton system
    restarts with ridge scaled by 10, up to 1e-2, before raising
    :class:`NumericalError`. Non-convergence returns the best iterate with
    ``converged=False`` and a :class:`ConvergenceWarning`.

    Returns ``(coef, info)`` with ``coef`` of length d+1, intercept first.
    """
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    z = np.asarray(z, dtype=np.float64).ravel()
    n, d = X.shape
    if z.shape != (n,):
        raise DataError("design and labels disagree on sample count")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains non-finite values")
    n_pos = int(z.sum())
    if n_pos == 0 or n_pos == n:
        raise DataError("need at least one sample of each z class")
    Xa = np.concatenate([np.ones((n, 1)), X], axis=1)
    penalty_mask = np.ones(d + 1)
    penalty_mask[0] = 0.0

    current_ridge = float(ridge)
    while True:
        coef = np.zeros(d + 1)
        eta = Xa @ coef
        best = (coef.copy(), _penalized_loglik(eta, z, coef, current_ridge))
        converged = False
        iterations = 0
        failed = False
        for iterations in range(1, int(max_iter) + 1):
            p = expit(eta)
            grad = Xa.T @ (z - p) - 2.0 * current_ridge * penalty_mask * coef
            if np.linalg.norm(grad) <= tol:
                converged = True
                iterations -= 1
                break
            w = p * (1.0 - p)
            hess = (Xa * w[:, None]).T @ Xa
            hess[np.diag_indices(d + 1)] += 2.0 * current_ridge * penalty_mask
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                failed = True
                break
            if not np.all(np.isfinite(step)):
                failed = True
                break
            # backtrack until the penalized objective stops decreasing; the
            # slack admits full Newton steps once changes fall below float64
            # resolution of the objective, where quadratic convergence takes over
            objective = _penalized_loglik(eta, z, coef, current_ridge)
            slack = 1e-10 * (1.0 + abs(objective))
            scale = 1.0
            for _ in range(40):
                trial = coef + scale * step
                trial_eta = Xa @ trial
                if _penalized_loglik(trial_eta, z, trial, current_ridge) >= objective - slack:
                    break
                scale *= 0.5
            coef = coef + scale * step
            eta = Xa @ coef
            value = _penalized_loglik(eta, z, coef, current_ridge)
            if value >= best[1]:
                best = (coef.copy(), value)
        if failed:
            escalated = max(current_ridge * 10.0, 1e-8)  # a zero ridge must still grow
            if escalated > MAX_RIDGE:
                raise NumericalError(
                    f"IRLS system singular even at ridge {current_ridge:g}"
                )
            current_ridge = escalated
            continue
        break

    if not converged:
        coef = best[0]
        eta = Xa @ coef
        warnings.warn(
            f"IRLS did not reach tolerance {tol:g} in {max_iter} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    deviance = -2.0 * float(np.sum(z * eta) - np.sum(np.logaddexp(0.0, eta)))
    info = {
        "iterations": iterations,
        "deviance": deviance,
        "converged": converged,
        "ridge": current_ridge,
    }
    return coef, info


def fit_density_ratio(sur, all_voxels, lam=1.0, c=1.0, ridge=DEFAULT_RIDGE,
                      tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Build the discrimination set, standardize, fit, and package the model."""
    X, z, n_train, n_test = build_discrimination_set(sur, all_voxels)
    shift, scale = standardize_columns(X)
    coef, info = irls_fit((X - shift) / scale, z, ridge=ridge, tol=tol, max_iter=max_iter)
    model = DensityRatioModel(
        coef=coef,
        lam=lam,
        c=c,
        feature_shift=shift,
        feature_scale=scale,
        iterations=info["iterations"],
        deviance=info["deviance"],
        converged=info["converged"],
    )
    return model, n_train, n_test


def estimate_weights(model, samples):
    """Per-sample importance weights exp(lam * (ln c - t(x))).

    ``samples`` may be a SampleTable or a raw feature matrix. The exponent is
    clamped to +-700 before exponentiation; no probability is ever divided.
    """
    features = samples.features if hasattr(samples, "features") else samples
    exponent = model.lam * (np.log(model.c) - model.log_odds(features))
    return np.exp(np.clip(exponent, -EXP_CLAMP, EXP_CLAMP))


@dataclass(frozen=True)
class WeightReport:
    """Weights for one patient's annotated voxels plus fit bookkeeping."""

    patient_id: str
    weights: np.ndarray
    voxel_indices: np.ndarray
    n_train: int
    n_test: int
    lam: float
    c: float
    converged: bool
    iterations: int
    model: DensityRatioModel = field(repr=False, default=None)

    @property
    def sum_weights(self):
        return float(self.weights.sum())


def compute_patient_weights(volume, lam=1.0, c=1.0, ridge=DEFAULT_RIDGE,
                            tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                            sum_tolerance=0.01):
    """Estimate importance weights for one patient's annotated (SUR) voxels.

    Fits the annotation-vs-image discrimination model on this patient alone,
    so the result never depends on any other patient. With ``lam = 1`` a
    relative deviation of the weight sum from ``c * n_test`` beyond
    ``sum_tolerance`` triggers a :class:`WeightSumWarning` (not an error).
    """
    if volume.sur_labels is None:
        raise DataError(f"volume {volume.patient_id!r} has no SUR annotation raster")
    sur = extract_features(volume, region="labeled_voxels_only", label_source="sur_labels")
    all_voxels = extract_features(volume, region="all_brain_voxels")
    model, n_train, n_test = fit_density_ratio(
        sur, all_voxels, lam=lam, c=c, ridge=ridge, tol=tol, max_iter=max_iter
    )
    weights = estimate_weights(model, sur)
    total = float(weights.sum())
    expected = c * n_test
    if lam == 1.0 and expected > 0 and abs(total - expected) / expected > sum_tolerance:
        warnings.warn(
            f"patient {volume.patient_id}: weight sum {total:.6g} deviates from "
            f"c*n_test = {expected:.6g} by more than {sum_tolerance:.2%}",
            WeightSumWarning,
            stacklevel=2,
        )
    return WeightReport(
        patient_id=volume.patient_id,
        weights=weights,
        voxel_indices=sur.voxel_indices.copy(),
        n_train=n_train,
        n_test=n_test,
        lam=lam,
        c=c,
        converged=model.converged,
        iterations=model.iterations,
        model=model,
    )


def write_weight_report(report, out_dir, raster_size=None):
    """Write ``weights.csv`` (voxel_index,weight) plus a JSON sidecar.

    With ``raster_size`` given, also writes ``weights.f32``, a float32 raster
    with the weight at each annotated voxel and 0 elsewhere.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "weights.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["voxel_index", "weight"])
        for idx, w in zip(report.voxel_indices, report.weights):
            writer.writerow([int(idx), repr(float(w))])
    sidecar = {
        "patient_id": report.patient_id,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "lambda": report.lam,
        "c": report.c,
        "sum_weights": report.sum_weights,
        "converged": report.converged,
        "iterations": report.iterations,
    }
    (out / "weights.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    if raster_size is not None:
        raster = np.zeros(int(raster_size), dtype=np.float32)
        raster[report.voxel_indices] = report.weights
        raster.tofile(out / "weights.f32")
    return csv_path
