"""Core data model: volumes, manifest round trips, normalization, fusion."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dalsa.errors import ConstantChannelWarning, DataError
from dalsa.labels import (
    ACTIVE,
    EDEMA,
    FLUID,
    HEALTHY,
    NECROSIS,
    TUMOROUS,
    LabelScheme,
    fuse_labels,
)
from dalsa.samples import extract_features, read_sample_csv, write_sample_csv
from dalsa.synthetic import make_toy
from dalsa.volume import PatientVolume, load_patient, mode_normalize, save_patient


def tiny_volume(channel_values, mask=None, labels=None, dims=(2, 2, 1), names=("c0",)):
    n = dims[0] * dims[1] * dims[2]
    channels = np.asarray(channel_values, dtype=np.float32).reshape(len(names), n)
    return PatientVolume(
        patient_id="tiny",
        dims=dims,
        channel_names=names,
        channels=channels,
        brain_mask=np.ones(n, dtype=np.uint8) if mask is None else np.asarray(mask, np.uint8),
        labels=None if labels is None else np.asarray(labels, np.uint8),
    )


class TestVolumeInvariants:
    def test_smallest_wellformed_volume(self, tmp_path):
        vol = tiny_volume([1.0, 2.0, 3.0, 4.0])
        save_patient(vol, tmp_path / "p")
        loaded = load_patient(tmp_path / "p" / "patient.json")
        assert loaded.n_voxels == 4
        assert int(loaded.brain_mask.sum()) == 4

    def test_raster_size_mismatch(self, tmp_path):
        vol = tiny_volume([1.0, 2.0, 3.0, 4.0])
        save_patient(vol, tmp_path / "p")
        # truncate the channel file to 3 floats
        raw = (tmp_path / "p" / "c0.f32").read_bytes()
        (tmp_path / "p" / "c0.f32").write_bytes(raw[:12])
        with pytest.raises(DataError, match="raster size mismatch"):
            load_patient(tmp_path / "p")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing file"):
            load_patient(tmp_path / "nope" / "patient.json")

    def test_label_outside_mask_names_voxel(self):
        with pytest.raises(DataError, match="voxel index 2"):
            tiny_volume([0, 0, 0, 0], mask=[1, 1, 0, 1], labels=[0, 0, HEALTHY, 0])

    def test_bad_mask_values(self):
        with pytest.raises(DataError, match="0 or 1"):
            tiny_volume([0, 0, 0, 0], mask=[1, 2, 0, 1])

    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 24
        vol = PatientVolume(
            patient_id="rt",
            dims=(2, 3, 4),
            spacing=(0.5, 0.5, 3.0),
            channel_names=("a", "b"),
            channels=rng.standard_normal((2, n)).astype(np.float32),
            brain_mask=(rng.random(n) < 0.8).astype(np.uint8),
            labels=None,
        )
        save_patient(vol, tmp_path / "p")
        loaded = load_patient(tmp_path / "p")
        assert loaded.channels.tobytes() == vol.channels.tobytes()
        assert loaded.brain_mask.tobytes() == vol.brain_mask.tobytes()
        assert loaded.dims == vol.dims

    def test_toy_roundtrip_with_labels(self, tmp_path):
        vol = make_toy()
        save_patient(vol, tmp_path / "toy")
        loaded = load_patient(tmp_path / "toy")
        assert loaded.labels.tobytes() == vol.labels.tobytes()
        assert loaded.sur_labels.tobytes() == vol.sur_labels.tobytes()
        assert loaded.channels.tobytes() == vol.channels.tobytes()


class TestModeNormalize:
    def test_hand_computed_bimodal(self):
        # values {0,0,0,10}, 2 bins over [0,10]: bin [0,5) holds three values,
        # so the mode is its center 2.5; population std of the set is
        # sqrt(((3*2.5^2) + 7.5^2) / 4) = sqrt(18.75)
        values = np.array([0.0, 0.0, 0.0, 10.0])
        sigma = np.sqrt(18.75)
        out = mode_normalize(values, np.ones(4), bins=2)
        np.testing.assert_allclose(out, (values - 2.5) / sigma, rtol=0, atol=1e-12)

    def test_constant_channel_warns_and_zeroes(self):
        with pytest.warns(ConstantChannelWarning):
            out = mode_normalize(np.full(6, 5.0), np.ones(6))
        np.testing.assert_array_equal(out, np.zeros(6))

    def test_unit_std_after_normalization(self):
        rng = np.random.default_rng(1)
        values = rng.gamma(2.0, 3.0, size=500)
        mask = rng.random(500) < 0.7
        out = mode_normalize(values, mask)
        assert abs(out[mask].std() - 1.0) < 1e-6

    def test_affine_property(self):
        rng = np.random.default_rng(2)
        values = rng.normal(40.0, 7.0, size=300)
        mask = np.ones(300)
        sigma = values.std()
        out = mode_normalize(values, mask)
        diff_out = out[:-1] - out[1:]
        diff_in = (values[:-1] - values[1:]) / sigma
        np.testing.assert_allclose(diff_out, diff_in, atol=1e-9)

    def test_out_of_mask_voxels_follow_same_map(self):
        values = np.array([0.0, 0.0, 0.0, 10.0, 100.0])
        mask = np.array([1, 1, 1, 1, 0])
        out = mode_normalize(values, mask, bins=2)
        assert out[4] == pytest.approx((100.0 - 2.5) / np.sqrt(18.75))

    def test_requires_two_in_mask_voxels(self):
        with pytest.raises(DataError):
            mode_normalize(np.array([1.0, 2.0]), np.array([1, 0]))


class TestExtractFeatures:
    def test_all_brain_voxels(self):
        vol = tiny_volume(
            np.arange(8, dtype=np.float32), names=("c0", "c1"), labels=[0, HEALTHY, 0, 0]
        )
        table = extract_features(vol, "all_brain_voxels")
        assert len(table) == 4 and table.n_features == 2
        assert list(table.labels) == [0, HEALTHY, 0, 0]
        assert np.all(table.weights == 1.0)
        # feature order follows the channel order
        np.testing.assert_array_equal(table.features[:, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(table.features[:, 1], [4, 5, 6, 7])

    def test_labeled_only(self):
        vol = tiny_volume([0.0, 1.0, 2.0, 3.0], labels=[HEALTHY, 0, EDEMA, NECROSIS])
        table = extract_features(vol, "labeled_voxels_only")
        assert len(table) == 3
        assert list(table.labels) == [HEALTHY, EDEMA, NECROSIS]
        assert list(table.voxel_indices) == [0, 2, 3]

    def test_row_count_equals_mask_size(self):
        rng = np.random.default_rng(3)
        mask = (rng.random(36) < 0.5).astype(np.uint8)
        mask[0] = 1
        vol = PatientVolume(
            patient_id="m",
            dims=(6, 6, 1),
            channel_names=("c",),
            channels=rng.standard_normal((1, 36)).astype(np.float32),
            brain_mask=mask,
        )
        table = extract_features(vol, "all_brain_voxels")
        assert len(table) == int(mask.sum())

    def test_empty_selection(self):
        vol = tiny_volume([1.0, 2.0, 3.0, 4.0], mask=[0, 0, 0, 0])
        with pytest.raises(DataError, match="empty selection"):
            extract_features(vol, "all_brain_voxels")


class TestFuseLabels:
    def test_paper_relabeling_rule(self):
        fused = fuse_labels([HEALTHY, FLUID, EDEMA, ACTIVE, NECROSIS], LabelScheme("two_class"))
        assert list(fused) == [HEALTHY, HEALTHY, TUMOROUS, TUMOROUS, TUMOROUS]

    def test_five_class_identity(self):
        labels = np.array([0, 1, 2, 3, 4, 5])
        np.testing.assert_array_equal(fuse_labels(labels, LabelScheme("five_class")), labels)

    def test_unknown_class(self):
        with pytest.raises(DataError, match="unknown class id"):
            fuse_labels([1, 7], LabelScheme("two_class"))

    def test_unlabeled_stays_unlabeled(self):
        assert fuse_labels([0], "two_class")[0] == 0

    @given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=30))
    def test_idempotent(self, labels):
        once = fuse_labels(labels, "two_class")
        twice = fuse_labels(once, "two_class")
        np.testing.assert_array_equal(once, twice)

    def test_bad_scheme(self):
        with pytest.raises(DataError):
            LabelScheme("three_class")


class TestSampleCsv:
    def test_roundtrip(self, tmp_path):
        vol = make_toy()
        table = extract_features(vol, "labeled_voxels_only", label_source="sur_labels")
        path = write_sample_csv(table, tmp_path / "t.csv")
        back = read_sample_csv(path)
        np.testing.assert_array_equal(back.features, table.features)
        np.testing.assert_array_equal(back.labels, table.labels)
        np.testing.assert_array_equal(back.weights, table.weights)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError, match="header"):
            read_sample_csv(path)
