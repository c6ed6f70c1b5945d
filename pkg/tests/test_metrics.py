"""Metrics against independent brute-force scorers and hand-worked cases."""

import numpy as np
import pytest

from vidssl.metrics import (
    MetricError,
    confusion,
    evaluate_multi_label,
    evaluate_single_label,
    group_prf,
    mca,
    merged_mca,
    mpca,
)

# --- independent oracles (deliberately naive re-implementations) -----------


def naive_mca(preds, gts):
    correct = 0
    for p, g in zip(preds, gts):
        if p == g:
            correct += 1
    return correct / len(gts)


def naive_mpca(preds, gts, num_classes):
    per_class = []
    for c in range(num_classes):
        hits, total = 0, 0
        for p, g in zip(preds, gts):
            if g == c:
                total += 1
                if p == c:
                    hits += 1
        if total:
            per_class.append(hits / total)
    return sum(per_class) / len(per_class)


def naive_group_prf(pred_sets, gt_sets):
    ps, rs, fs = [], [], []
    for pred, gt in zip(pred_sets, gt_sets):
        inter = 0
        for item in pred:
            if item in gt:
                inter += 1
        p = inter / len(pred) if len(pred) else 0.0
        r = inter / len(gt)
        f = (2 * p * r / (p + r)) if (p + r) else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return sum(ps) / len(ps), sum(rs) / len(rs), sum(fs) / len(fs)


class TestMca:
    def test_all_correct(self):
        assert mca([1, 2, 3], [1, 2, 3]) == 1.0

    def test_all_wrong(self):
        assert mca([0, 0], [1, 2]) == 0.0

    def test_three_of_four(self):
        assert mca([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            mca([0], [0, 1])


class TestMpca:
    def test_balanced_all_correct(self):
        assert mpca([0, 1, 0, 1], [0, 1, 0, 1], 2) == 1.0

    def test_imbalance_divergence(self):
        # Class 0: 9/10 correct; class 1: 0/2 correct.
        gts = [0] * 10 + [1] * 2
        preds = [0] * 9 + [1] + [0] * 2
        assert mpca(preds, gts, 2) == pytest.approx(0.45)
        assert mca(preds, gts) == pytest.approx(0.75)

    def test_absent_class_excluded(self):
        assert mpca([0, 0], [0, 0], 3) == 1.0

    def test_empty_input(self):
        with pytest.raises(MetricError):
            mpca([], [], 2)


class TestMergedMca:
    VOLLEYBALL_MERGE = {0: 0, 1: 1, 2: 0, 3: 1}  # r-pass, l-pass, r-set, l-set

    def test_identity_map_equals_mca(self):
        rng = np.random.default_rng(0)
        identity = {i: i for i in range(5)}
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            preds = rng.integers(0, 5, n).tolist()
            gts = rng.integers(0, 5, n).tolist()
            assert merged_mca(preds, gts, identity) == mca(preds, gts)

    def test_volleyball_merge_counts_set_pass_confusion_correct(self):
        # Predicting r-set (2) for a true r-pass (0) counts as correct after merging.
        assert merged_mca([2], [0], self.VOLLEYBALL_MERGE) == 1.0
        assert mca([2], [0]) == 0.0

    def test_coarsening_never_decreases_accuracy(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            n_classes = int(rng.integers(2, 8))
            merge = {i: int(rng.integers(0, 3)) for i in range(n_classes)}
            n = int(rng.integers(1, 40))
            preds = rng.integers(0, n_classes, n).tolist()
            gts = rng.integers(0, n_classes, n).tolist()
            assert merged_mca(preds, gts, merge) >= mca(preds, gts)

    def test_unmapped_label(self):
        with pytest.raises(MetricError):
            merged_mca([0], [3], {0: 0})


class TestGroupPrf:
    def test_half_overlap(self):
        p, r, f = group_prf([{"a", "b"}], [{"b", "c"}])
        assert (p, r, f) == (0.5, 0.5, 0.5)

    def test_exact_match(self):
        assert group_prf([{1, 2}], [{1, 2}]) == (1.0, 1.0, 1.0)

    def test_empty_prediction_rule(self):
        assert group_prf([set()], [{1}]) == (0.0, 0.0, 0.0)

    def test_empty_gt_rejected(self):
        with pytest.raises(MetricError):
            group_prf([{1}], [set()])

    def test_matches_bruteforce_on_random_cases(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            preds = [set(rng.choice(8, size=rng.integers(0, 5), replace=False).tolist()) for _ in range(n)]
            gts = [set(rng.choice(8, size=rng.integers(1, 5), replace=False).tolist()) for _ in range(n)]
            assert group_prf(preds, gts) == naive_group_prf(preds, gts)

    def test_sample_permutation_invariance(self):
        preds = [{1}, {2, 3}, set(), {0}]
        gts = [{1, 2}, {3}, {0}, {0}]
        base = group_prf(preds, gts)
        order = [2, 0, 3, 1]
        assert group_prf([preds[i] for i in order], [gts[i] for i in order]) == pytest.approx(base)


class TestAgainstOracles:
    def test_mca_mpca_random_cases(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n_classes = int(rng.integers(2, 7))
            n = int(rng.integers(1, 50))
            preds = rng.integers(0, n_classes, n).tolist()
            gts = rng.integers(0, n_classes, n).tolist()
            assert mca(preds, gts) == naive_mca(preds, gts)
            assert mpca(preds, gts, n_classes) == pytest.approx(
                naive_mpca(preds, gts, n_classes), abs=1e-12
            )

    def test_balanced_symmetric_case_mca_equals_mpca(self):
        # Perfect class balance and class-symmetric errors.
        gts = [0] * 4 + [1] * 4
        preds = [0, 0, 0, 1, 1, 1, 1, 0]
        assert mca(preds, gts) == mpca(preds, gts, 2)


class TestReports:
    def test_single_label_report(self):
        report = evaluate_single_label([0, 1, 1], [0, 1, 0], 2, merge_map={0: 0, 1: 0})
        assert report.sample_count == 3
        assert report.mca == pytest.approx(2 / 3)
        assert report.merged_mca == 1.0
        assert report.confusion_matrix == [[1, 1], [0, 1]]
        # Row sums equal per-class support.
        mat = np.array(report.confusion_matrix)
        assert mat.sum(axis=1).tolist() == [2, 1]

    def test_multi_label_report(self):
        report = evaluate_multi_label([{0, 1}], [{1, 2}])
        assert (report.p_g, report.r_g, report.f_g) == (0.5, 0.5, 0.5)
        assert report.to_dict()["sample_count"] == 1

    def test_confusion_requires_valid_ids(self):
        with pytest.raises(MetricError):
            mpca([0], [5], 2)
