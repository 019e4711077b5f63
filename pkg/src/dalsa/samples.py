"""Flat sample tables: one row per voxel (or per tabular record).

A SampleTable carries the feature matrix, class labels, observation weights,
and row provenance (patient id, voxel index). Tables are immutable; all
"mutating" operations return new tables.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def _readonly(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SampleTable:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    weights: np.ndarray = field(default=None)  # (n,) float64, defaults to 1
    patient_ids: np.ndarray = field(default=None)  # (n,) str
    voxel_indices: np.ndarray = field(default=None)  # (n,) int64, -1 for tabular

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {np.shape(self.features)}")
        n = X.shape[0]
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if y.shape != (n,):
            raise DataError(f"labels shape {y.shape} does not match {n} rows")
        w = self.weights
        w = np.ones(n) if w is None else np.ascontiguousarray(w, dtype=np.float64)
        if w.shape != (n,):
            raise DataError(f"weights shape {w.shape} does not match {n} rows")
        if n and w.min() < 0:
            raise DataError("weights must be nonnegative")
        pid = self.patient_ids
        if pid is None:
            pid = np.full(n, "", dtype=object)
        else:
            pid = np.asarray(pid, dtype=object)
            if pid.shape != (n,):
                raise DataError("patient_ids length does not match rows")
        vox = self.voxel_indices
        if vox is None:
            vox = np.full(n, -1, dtype=np.int64)
        else:
            vox = np.ascontiguousarray(vox, dtype=np.int64)
            if vox.shape != (n,):
                raise DataError("voxel_indices length does not match rows")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "patient_ids", _readonly(pid))
        object.__setattr__(self, "voxel_indices", _readonly(vox))

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, index):
        return SampleTable(
            features=self.features[index],
            labels=self.labels[index],
            weights=self.weights[index],
            patient_ids=self.patient_ids[index],
            voxel_indices=self.voxel_indices[index],
        )

    def with_weights(self, weights):
        return SampleTable(
            features=self.features,
            labels=self.labels,
            weights=weights,
            patient_ids=self.patient_ids,
            voxel_indices=self.voxel_indices,
        )

    def with_labels(self, labels):
        return SampleTable(
            features=self.features,
            labels=labels,
            weights=self.weights,
            patient_ids=self.patient_ids,
            voxel_indices=self.voxel_indices,
        )


def concat_tables(tables):
    tables = list(tables)
    if not tables:
        raise DataError("cannot concatenate zero tables")
    d = tables[0].n_features
    for t in tables[1:]:
        if t.n_features != d:
            raise DataError(
                f"feature-dimension mismatch: {t.n_features} vs {d}"
            )
    return SampleTable(
        features=np.concatenate([t.features for t in tables]),
        labels=np.concatenate([t.labels for t in tables]),
        weights=np.concatenate([t.weights for t in tables]),
        patient_ids=np.concatenate([t.patient_ids for t in tables]),
        voxel_indices=np.concatenate([t.voxel_indices for t in tables]),
    )


REGIONS = ("all_brain_voxels", "labeled_voxels_only")


def extract_features(volume, region="all_brain_voxels", label_source="labels"):
    """Turn a volume into a SampleTable, one row per selected in-mask voxel.

    ``region`` selects either every in-mask voxel or only those carrying a
    nonzero label in ``label_source`` ("labels" or "sur_labels"). Feature
    order follows the manifest channel order; weights start at 1; labels are
    copied from the chosen raster (0 where unlabeled).
    """
    if region not in REGIONS:
        raise DataError(f"unknown region: {region!r}")
    if label_source not in ("labels", "sur_labels"):
        raise DataError(f"unknown label source: {label_source!r}")
    raster = getattr(volume, label_source)
    mask = volume.brain_mask != 0
    if region == "labeled_voxels_only":
        if raster is None:
            raise DataError(f"volume {volume.patient_id!r} has no {label_source} raster")
        selected = mask & (raster != 0)
    else:
        selected = mask
    idx = np.nonzero(selected)[0]
    if idx.size == 0:
        raise DataError("empty selection")
    features = volume.channels[:, idx].T.astype(np.float64)
    if raster is not None:
        labels = raster[idx].astype(np.int64)
    else:
        labels = np.zeros(idx.size, dtype=np.int64)
    return SampleTable(
        features=features,
        labels=labels,
        patient_ids=np.full(idx.size, volume.patient_id, dtype=object),
        voxel_indices=idx.astype(np.int64),
    )


def write_sample_csv(table, path, include_weights=True):
    """Write a table as CSV with header ``f0,...,f{d-1},label[,weight]``."""
    d = table.n_features
    header = [f"f{i}" for i in range(d)] + ["label"]
    if include_weights:
        header.append("weight")
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(table)):
            row = [repr(float(v)) for v in table.features[i]]
            row.append(int(table.labels[i]))
            if include_weights:
                row.append(repr(float(table.weights[i])))
            writer.writerow(row)
    return path


def read_sample_csv(path):
    """Read a sample table written by :func:`write_sample_csv`."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"empty CSV: {path}")
        has_weight = header[-1] == "weight"
        d = len(header) - 1 - (1 if has_weight else 0)
        expected = [f"f{i}" for i in range(d)] + ["label"] + (["weight"] if has_weight else [])
        if header != expected:
            raise DataError(f"unexpected CSV header in {path}: {header}")
        feats, labels, weights = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            feats.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
            weights.append(float(row[d + 1]) if has_weight else 1.0)
    if not feats:
        raise DataError(f"no samples in {path}")
    return SampleTable(
        features=np.array(feats, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        weights=np.array(weights, dtype=np.float64),
    )
