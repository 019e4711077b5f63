"""Metrics: confusion identities, sweeps, AUC oracle, fusion, summaries."""

import numpy as np
import pytest
from scipy.stats import rankdata

from dalsa.errors import DataError
from dalsa.metrics import (
    MetricsReport,
    confusion_metrics,
    default_threshold_grid,
    loocv_summary,
    rater_majority_vote,
    sweep,
)


def mann_whitney_auc(scores, ref):
    """Rank-statistic AUC with average ranks for ties."""
    ranks = rankdata(scores)
    n_pos = int(ref.sum())
    n_neg = ref.size - n_pos
    u = ranks[ref].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


class TestConfusionMetrics:
    def test_identity(self):
        mask = np.array([1, 0, 1, 1, 0], dtype=bool)
        r = confusion_metrics(mask, mask)
        assert r.dice == 1.0 and r.sensitivity == 1.0 and r.specificity == 1.0

    def test_disjoint(self):
        r = confusion_metrics(np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1]))
        assert r.dice == 0.0

    def test_half_overlap(self):
        pred = np.array([1, 1, 0, 0, 0])
        ref = np.array([0, 1, 1, 0, 0])
        r = confusion_metrics(pred, ref)
        assert r.dice == pytest.approx(0.5)
        assert (r.tp, r.fp, r.tn, r.fn) == (1, 1, 2, 1)

    def test_undefined_ratios_are_none_not_zero(self):
        r = confusion_metrics(np.zeros(4), np.zeros(4))
        assert r.dice is None and r.sensitivity is None and r.ppv is None
        assert r.specificity == 1.0

    def test_eval_mask_restricts(self):
        pred = np.array([1, 1, 1, 1])
        ref = np.array([1, 0, 1, 0])
        r = confusion_metrics(pred, ref, eval_mask=np.array([1, 1, 0, 0]))
        assert (r.tp, r.fp) == (1, 1) and r.tn + r.fn == 0

    def test_no_voxels(self):
        with pytest.raises(DataError, match="no evaluation voxels"):
            confusion_metrics(np.ones(3), np.ones(3), eval_mask=np.zeros(3))

    def test_misaligned(self):
        with pytest.raises(DataError, match="misaligned"):
            confusion_metrics(np.ones(3), np.ones(4))

    def test_dice_symmetry_and_set_form(self):
        rng = np.random.default_rng(20)
        for _ in range(30):
            a = rng.random(80) < 0.4
            b = rng.random(80) < 0.3
            if not (a.any() or b.any()):
                continue
            r_ab = confusion_metrics(a, b)
            r_ba = confusion_metrics(b, a)
            assert r_ab.dice == r_ba.dice
            set_form = 2 * np.sum(a & b) / (a.sum() + b.sum())
            assert r_ab.dice == pytest.approx(set_form)


class TestSweep:
    def test_perfect_classifier(self):
        ref = np.array([0, 0, 1, 1, 0, 1], dtype=bool)
        scores = ref.astype(float)
        roc = sweep(scores, ref, kind="roc")
        assert roc.auc == pytest.approx(1.0)
        dice = sweep(scores, ref, kind="dice")
        for t, v in zip(dice.thresholds, dice.values["dice"]):
            if 0 < t <= 1:
                assert v == pytest.approx(1.0)

    def test_constant_scores_auc_half(self):
        ref = np.array([0, 1, 0, 1], dtype=bool)
        roc = sweep(np.full(4, 0.5), ref, kind="roc")
        assert roc.auc == pytest.approx(0.5)

    def test_single_class_ref_has_no_roc_but_dice_works(self):
        ref = np.ones(5, dtype=bool)
        with pytest.raises(DataError, match="ROC undefined"):
            sweep(np.linspace(0, 1, 5), ref, kind="roc")
        curve = sweep(np.linspace(0, 1, 5), ref, kind="dice")
        assert curve.values["dice"][0] == pytest.approx(1.0)

    def test_roc_monotone_with_endpoints(self):
        rng = np.random.default_rng(21)
        scores = rng.integers(0, 100, size=300) / 100.0
        ref = rng.random(300) < 0.4
        roc = sweep(scores, ref, kind="roc")
        # thresholds ascend so TPR/FPR descend along the array
        assert np.all(np.diff(roc.values["tpr"]) <= 1e-15)
        assert np.all(np.diff(roc.values["fpr"]) <= 1e-15)
        assert roc.values["tpr"][0] == 1.0 and roc.values["fpr"][0] == 1.0
        assert roc.values["tpr"][-1] == 0.0 and roc.values["fpr"][-1] == 0.0

    def test_auc_near_rank_statistic_for_continuous_scores(self):
        rng = np.random.default_rng(22)
        scores = rng.random(200)
        ref = rng.random(200) < 0.5
        roc = sweep(scores, ref, kind="roc")
        assert abs(roc.auc - mann_whitney_auc(scores, ref)) <= 0.08

    def test_auc_equals_rank_statistic_on_grid_scores(self):
        # scores drawn from the threshold grid itself, so every distinct
        # score is swept and the trapezoid equals the rank statistic
        rng = np.random.default_rng(23)
        grid = default_threshold_grid()
        for _ in range(50):
            scores = grid[rng.integers(0, grid.size, size=120)]
            ref = rng.random(120) < rng.uniform(0.2, 0.8)
            if ref.all() or not ref.any():
                continue
            roc = sweep(scores, ref, thresholds=grid, kind="roc")
            assert abs(roc.auc - mann_whitney_auc(scores, ref)) < 1e-12

    def test_grid_must_increase(self):
        with pytest.raises(DataError):
            sweep(np.array([0.3, 0.4]), np.array([0, 1]), thresholds=[0.5, 0.5], kind="dice")

    def test_default_grid(self):
        grid = default_threshold_grid()
        assert grid.size == 101 and grid[0] == 0.0 and grid[-1] == 1.0


class TestRaterMajorityVote:
    def test_identical_masks(self):
        m = np.array([1, 0, 1, 0], dtype=np.uint8)
        np.testing.assert_array_equal(rater_majority_vote([m, m, m]), m)

    def test_two_of_three(self):
        masks = [np.array([1]), np.array([1]), np.array([0])]
        assert rater_majority_vote(masks)[0] == 1

    def test_even_tie_is_negative(self):
        masks = [np.array([1]), np.array([0])]
        assert rater_majority_vote(masks)[0] == 0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(24)
        masks = [rng.random(50) < 0.5 for _ in range(5)]
        base = rater_majority_vote(masks)
        for _ in range(5):
            perm = [masks[i] for i in rng.permutation(5)]
            np.testing.assert_array_equal(rater_majority_vote(perm), base)

    def test_needs_two_masks(self):
        with pytest.raises(DataError):
            rater_majority_vote([np.ones(3)])

    def test_misaligned(self):
        with pytest.raises(DataError, match="misaligned"):
            rater_majority_vote([np.ones(3), np.ones(4)])


def report_with(dice, pid="p"):
    return MetricsReport(
        dice=dice, sensitivity=0.5, specificity=0.5, ppv=0.5,
        tp=1, fp=1, tn=1, fn=1, patient_id=pid,
    )


class TestLoocvSummary:
    def test_identical_reports(self):
        summary = loocv_summary([report_with(0.7, "a"), report_with(0.7, "b")])
        d = summary["dice"]
        assert d["mean"] == 0.7 and d["median"] == 0.7 and d["std"] == 0.0

    def test_sample_std_convention(self):
        summary = loocv_summary([report_with(0.2, "a"), report_with(0.8, "b")])
        d = summary["dice"]
        assert d["mean"] == pytest.approx(0.5)
        assert d["median"] == pytest.approx(0.5)
        assert d["std"] == pytest.approx(0.42426406871192851, abs=1e-12)

    def test_one_patient_rejected(self):
        with pytest.raises(DataError):
            loocv_summary([report_with(0.5)])

    def test_undefined_values_excluded(self):
        summary = loocv_summary([report_with(None, "a"), report_with(0.6, "b"), report_with(0.8, "c")])
        d = summary["dice"]
        assert d["n"] == 2 and d["mean"] == pytest.approx(0.7)
