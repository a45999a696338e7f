"""Metric unit tests: rank-based AUC against the O(n^2) pairwise oracle,
KS against a brute-force ECDF scan, fold assignment, paired t-tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from creditdyn.metrics import (ALPHA, ComparisonResult, CvResult,
                               UndefinedMetricError, auc, ks, make_folds,
                               paired_ttest)


def pairwise_auc(scores, labels):
    """Quadratic reference: wins + half-ties over all (pos, neg) pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def brute_ks(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    best = 0.0
    for t in scores:
        gap = abs((pos <= t).mean() - (neg <= t).mean())
        best = max(best, gap)
    return best


class TestAuc:
    def test_spec_example(self):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_all_ties(self):
        assert auc([3.0] * 6, [0, 1, 0, 1, 0, 1]) == pytest.approx(0.5)

    def test_perfect_ranking(self):
        assert auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            auc([1.0, 2.0], [1, 1])

    def test_nonbinary_raises(self):
        with pytest.raises(ValueError):
            auc([1.0, 2.0], [0, 2])

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(200):
            n = int(rng.integers(5, 500))
            scores = rng.normal(size=n).round(1)  # force ties
            labels = (rng.random(n) < 0.4).astype(int)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auc(scores, labels) == pytest.approx(
                pairwise_auc(scores, labels), abs=1e-12)

    def test_negation_symmetry(self, rng):
        scores = rng.normal(size=100)
        labels = (rng.random(100) < 0.5).astype(int)
        labels[:2] = [0, 1]
        assert auc(scores, labels) == pytest.approx(
            1.0 - auc(-scores, labels), abs=1e-12)

    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=60),
           st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_monotone_transform_invariance(self, raw, seed):
        # coarse grid so the affine transform preserves equalities exactly
        scores = np.round(np.asarray(raw), 2)
        labels = np.asarray([i % 2 for i in range(len(raw))])
        transformed = 3.0 * scores + 7.0
        assert auc(scores, labels) == pytest.approx(
            auc(transformed, labels), abs=1e-12)
        assert ks(scores, labels) == pytest.approx(
            ks(transformed, labels), abs=1e-12)


class TestKs:
    def test_disjoint_supports(self):
        assert ks([1, 2, 10, 11], [0, 0, 1, 1]) == 1.0

    def test_identical_class_distributions(self):
        assert ks([1, 2, 1, 2], [0, 0, 1, 1]) == 0.0

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            ks([1.0, 2.0], [0, 0])

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            n = int(rng.integers(5, 300))
            scores = rng.normal(size=n).round(1)
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert ks(scores, labels) == pytest.approx(
                brute_ks(scores, labels), abs=1e-12)


class TestMakeFolds:
    def test_deterministic(self):
        ids = [f"b{i}" for i in range(100)]
        assert np.array_equal(make_folds(ids, 10, 3), make_folds(ids, 10, 3))

    def test_same_borrower_same_fold_across_subsets(self):
        ids = [f"b{i}" for i in range(50)]
        full = make_folds(ids, 5, 1)
        part = make_folds(ids[10:30], 5, 1)
        assert np.array_equal(full[10:30], part)

    def test_fold_balance(self):
        ids = [f"borrower-{i}" for i in range(10_000)]
        folds = make_folds(ids, 10, 42)
        counts = np.bincount(folds, minlength=10)
        assert counts.min() > 900 and counts.max() < 1100

    def test_k_exceeds_n_raises(self):
        with pytest.raises(ValueError):
            make_folds(["a", "b"], 3, 0)

    def test_k_below_two_raises(self):
        with pytest.raises(ValueError):
            make_folds(["a", "b"], 1, 0)

    def test_seed_changes_assignment(self):
        ids = [f"b{i}" for i in range(200)]
        assert not np.array_equal(make_folds(ids, 10, 0), make_folds(ids, 10, 1))


class TestPairedTtest:
    def test_identical_vectors(self):
        r = paired_ttest([0.5] * 10, [0.5] * 10)
        assert r.p_value == 1.0 and not r.significant

    def test_constant_nonzero_difference(self):
        a = np.arange(10) * 0.25  # exactly representable
        r = paired_ttest(a, a + 1.0)
        assert r.p_value == 0.0 and r.significant

    def test_t_distribution_oracle(self, rng):
        # mean 0.5, sample SD 0.5, k = 10 -> t = 0.5 / (0.5/sqrt(10))
        d = np.array([0.0, 1.0] * 5)
        d = (d - d.mean()) / d.std(ddof=1) * 0.5 + 0.5
        a = rng.normal(size=10)
        r = paired_ttest(a, a + d)
        t = 0.5 / (0.5 / np.sqrt(10))
        assert t == pytest.approx(3.16227766, abs=1e-6)
        assert r.p_value == pytest.approx(2 * stats.t.sf(t, df=9), abs=1e-9)
        assert r.p_value == pytest.approx(0.0115, abs=5e-4)
        assert r.significant

    def test_relative_increment(self):
        r = paired_ttest([0.5, 0.5], [0.6, 0.6])
        assert r.delta_mean == pytest.approx(0.1)
        assert r.relative_increment == pytest.approx(0.2)

    def test_relative_increment_undefined_on_zero_baseline(self):
        r = paired_ttest([0.0, 0.0], [0.1, 0.1])
        assert np.isnan(r.relative_increment)
        assert not r.relative_increment_defined

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            paired_ttest([1.0, 2.0], [1.0])

    def test_significance_threshold(self):
        assert ALPHA == 0.05


class TestCvResult:
    def test_means_are_arithmetic(self):
        cv = CvResult(fold_ks=[0.1, 0.2, 0.3], fold_auc=[0.6, 0.7, 0.8])
        assert cv.k == 3
        assert cv.mean_ks == pytest.approx(0.2)
        assert cv.mean_auc == pytest.approx(0.7)
        assert cv.sd_ks == pytest.approx(np.std([0.1, 0.2, 0.3]))
