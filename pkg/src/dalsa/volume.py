"""Multi-channel patient volumes and their on-disk form.

A volume is a set of equally sized scalar rasters over one voxel grid:
named intensity channels (float32), a binary brain mask, and optional label
rasters (full ground truth and/or the sparse annotation raster). Rasters are
stored flat in x-fastest order (index = x + nx*(y + ny*z)); on disk they are
headerless little-endian files described by a ``patient.json`` manifest.

Volumes are immutable after construction and safe to share across workers.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstantChannelWarning, DataError
from .labels import NECROSIS

CHANNEL_DTYPE = np.dtype("<f4")
MASK_DTYPE = np.dtype("u1")

MANIFEST_NAME = "patient.json"


def _readonly(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PatientVolume:
    """One patient's raster stack.

    channels is a (n_channels, n_voxels) float32 array in manifest order;
    brain_mask, labels and sur_labels are flat uint8 rasters of n_voxels.
    """

    patient_id: str
    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    channel_names: tuple = ()
    channels: np.ndarray = field(default=None, repr=False)
    brain_mask: np.ndarray = field(default=None, repr=False)
    labels: np.ndarray = field(default=None, repr=False)
    sur_labels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 1:
            raise DataError(f"dims must be positive, got {self.dims}")
        n = self.n_voxels
        channels = np.ascontiguousarray(self.channels, dtype=CHANNEL_DTYPE)
        if channels.ndim != 2 or channels.shape != (len(self.channel_names), n):
            raise DataError(
                f"raster size mismatch: channels shape {channels.shape}, "
                f"expected ({len(self.channel_names)}, {n})"
            )
        mask = np.ascontiguousarray(self.brain_mask, dtype=MASK_DTYPE)
        if mask.shape != (n,):
            raise DataError(
                f"raster size mismatch: brain_mask has {mask.size} voxels, expected {n}"
            )
        if mask.size and mask.max() > 1:
            raise DataError("brain_mask values must be 0 or 1")
        object.__setattr__(self, "channels", _readonly(channels))
        object.__setattr__(self, "brain_mask", _readonly(mask))
        for name in ("labels", "sur_labels"):
            raster = getattr(self, name)
            if raster is None:
                continue
            raster = np.ascontiguousarray(raster, dtype=MASK_DTYPE)
            if raster.shape != (n,):
                raise DataError(
                    f"raster size mismatch: {name} has {raster.size} voxels, expected {n}"
                )
            if raster.size and raster.max() > NECROSIS:
                bad = int(np.argmax(raster > NECROSIS))
                raise DataError(f"unknown class id {int(raster[bad])} in {name} at voxel {bad}")
            outside = (raster != 0) & (mask == 0)
            if outside.any():
                first = int(np.argmax(outside))
                raise DataError(
                    f"label voxel outside brain mask: first offending voxel index {first} in {name}"
                )
            object.__setattr__(self, name, _readonly(raster))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return int(nx) * int(ny) * int(nz)

    @property
    def n_channels(self):
        return len(self.channel_names)

    def channel(self, name):
        try:
            idx = self.channel_names.index(name)
        except ValueError:
            raise DataError(f"no channel named {name!r}") from None
        return self.channels[idx]

    def with_channels(self, channels, channel_names=None):
        """Copy of this volume with replaced channel rasters."""
        return PatientVolume(
            patient_id=self.patient_id,
            dims=self.dims,
            spacing=self.spacing,
            channel_names=tuple(channel_names) if channel_names else self.channel_names,
            channels=channels,
            brain_mask=self.brain_mask,
            labels=self.labels,
            sur_labels=self.sur_labels,
        )


def mode_normalize(channel, mask, bins=256):
    """Shift a channel by its in-mask histogram mode and scale to unit spread.

    The mode is the center of the most populated of ``bins`` equal-width bins
    spanning the in-mask value range (ties resolve to the lower bin); the
    scale is the in-mask standard deviation. The same affine map is applied
    to every voxel, in or out of mask. Returns a float64 raster.

    A channel whose in-mask spread is below 1e-12 is only shifted (scale 1)
    and a :class:`ConstantChannelWarning` is emitted.
    """
    channel = np.asarray(channel, dtype=np.float64)
    mask = np.asarray(mask)
    if bins < 2:
        raise DataError(f"bins must be >= 2, got {bins}")
    inside = channel[mask != 0]
    if inside.size < 2:
        raise DataError("mask must contain at least 2 voxels")
    lo = float(inside.min())
    hi = float(inside.max())
    if hi > lo:
        counts, edges = np.histogram(inside, bins=int(bins), range=(lo, hi))
        k = int(np.argmax(counts))  # first max = lower bin on ties
        mode = 0.5 * (edges[k] + edges[k + 1])
    else:
        mode = lo
    sigma = float(inside.std())
    if sigma < 1e-12:
        warnings.warn(
            "channel is constant inside the mask; normalizing with scale 1",
            ConstantChannelWarning,
            stacklevel=2,
        )
        sigma = 1.0
    return (channel - mode) / sigma


def normalize_volume(volume, bins=256):
    """Mode-normalize every channel of a volume (new volume, float32 storage)."""
    out = np.empty_like(volume.channels, dtype=CHANNEL_DTYPE)
    for i in range(volume.n_channels):
        out[i] = mode_normalize(volume.channels[i], volume.brain_mask, bins=bins)
    return volume.with_channels(out)


def _read_raster(path, dtype, n_expected, what):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    data = np.fromfile(path, dtype=dtype)
    if data.size != n_expected:
        raise DataError(
            f"raster size mismatch: {what} file {path.name} holds {data.size} "
            f"values, expected {n_expected}"
        )
    return data


def load_patient(manifest_path):
    """Load a PatientVolume from its ``patient.json`` manifest.

    ``manifest_path`` may be the manifest file or the directory containing
    it. Raster files are resolved relative to the manifest.
    """
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid manifest {path}: {exc}") from exc
    for key in ("patient_id", "dims", "channels", "brain_mask"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks required key {key!r}")
    dims = tuple(int(v) for v in manifest["dims"])
    if len(dims) != 3:
        raise DataError(f"dims must have 3 entries, got {manifest['dims']}")
    n = dims[0] * dims[1] * dims[2]
    base = path.parent
    names = []
    rasters = []
    for entry in manifest["channels"]:
        names.append(str(entry["name"]))
        rasters.append(
            _read_raster(base / entry["file"], CHANNEL_DTYPE, n, f"channel {entry['name']}")
        )
    channels = np.vstack(rasters) if rasters else np.empty((0, n), dtype=CHANNEL_DTYPE)
    mask = _read_raster(base / manifest["brain_mask"], MASK_DTYPE, n, "brain_mask")
    labels = None
    if manifest.get("labels"):
        labels = _read_raster(base / manifest["labels"], MASK_DTYPE, n, "labels")
    sur = None
    if manifest.get("sur_labels"):
        sur = _read_raster(base / manifest["sur_labels"], MASK_DTYPE, n, "sur_labels")
    return PatientVolume(
        patient_id=str(manifest["patient_id"]),
        dims=dims,
        spacing=tuple(float(v) for v in manifest.get("spacing", (1.0, 1.0, 1.0))),
        channel_names=tuple(names),
        channels=channels,
        brain_mask=mask,
        labels=labels,
        sur_labels=sur,
    )


def _safe_name(name):
    return "".join(ch if (ch.isalnum() or ch in "-_") else "_" for ch in name)


def save_patient(volume, out_dir):
    """Write a volume as a manifest directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, name in enumerate(volume.channel_names):
        fname = f"{_safe_name(name)}.f32"
        volume.channels[i].astype(CHANNEL_DTYPE).tofile(out / fname)
        entries.append({"name": name, "file": fname})
    manifest = {
        "patient_id": volume.patient_id,
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "channels": entries,
        "brain_mask": "brain_mask.u8",
    }
    volume.brain_mask.astype(MASK_DTYPE).tofile(out / "brain_mask.u8")
    if volume.labels is not None:
        volume.labels.astype(MASK_DTYPE).tofile(out / "labels.u8")
        manifest["labels"] = "labels.u8"
    if volume.sur_labels is not None:
        volume.sur_labels.astype(MASK_DTYPE).tofile(out / "sur_labels.u8")
        manifest["sur_labels"] = "sur_labels.u8"
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path
