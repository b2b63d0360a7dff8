"""Tests for detection metrics, threshold search, ROC, and the GMM baseline."""

import math

import numpy as np
import pytest

from othin.baseline import OnlineDiagonalGMM
from othin.metrics import (
    auc,
    auc_score,
    best_threshold,
    detection_rates,
    roc_curve,
)


class TestDetectionRates:
    def test_hand_count_separating_threshold(self):
        m = detection_rates([5, 1, 2, 4], [1, 0, 0, 1], tau=3)
        assert m.p_d == 1.0 and m.p_f == 0.0
        assert m.detection_error == 0.0

    def test_hand_count_low_threshold(self):
        m = detection_rates([5, 1, 2, 4], [1, 0, 0, 1], tau=1.5)
        assert m.p_d == 1.0 and m.p_f == 0.5

    def test_infinite_threshold(self):
        m = detection_rates([5, 1, 2, 4], [1, 0, 0, 1], tau=math.inf)
        assert m.p_d == 0.0 and m.p_f == 0.0
        assert m.detection_error == 1.0

    def test_error_identity(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal(300)
        labels = rng.integers(0, 2, 300)
        labels[0], labels[1] = 0, 1
        m = detection_rates(scores, labels, tau=0.2)
        assert abs(m.detection_error - (1 - m.p_d + m.p_f)) <= 1e-12

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(500)
        labels = (rng.random(500) < 0.3).astype(int)
        taus = np.sort(rng.standard_normal(40))
        last_pd, last_pf = 1.0, 1.0
        for tau in taus:
            m = detection_rates(scores, labels, tau)
            assert m.p_d <= last_pd + 1e-12
            assert m.p_f <= last_pf + 1e-12
            last_pd, last_pf = m.p_d, m.p_f

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            detection_rates([1.0, 2.0], [1, 1], tau=0.5)


class TestBestThreshold:
    def test_perfect_separation(self):
        tau, m = best_threshold([10, 9, 1, 2], [1, 1, 0, 0])
        assert m.detection_error == 0.0
        assert 2 < tau < 9

    def test_identical_scores(self):
        tau, m = best_threshold([3.0, 3.0, 3.0, 3.0], [1, 0, 1, 0])
        assert m.detection_error == pytest.approx(1.0)
        # tie broken toward the larger threshold: flag nothing
        assert tau == math.inf

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(200)
        labels = (rng.random(200) < 0.4).astype(int)
        tau, m = best_threshold(scores, labels)
        # brute force over a dense threshold grid plus the same candidates
        candidates = np.concatenate(
            [[-math.inf, math.inf], np.linspace(scores.min() - 1, scores.max() + 1, 4001)]
        )
        best = min(
            1 - detection_rates(scores, labels, t).p_d + detection_rates(scores, labels, t).p_f
            for t in candidates
        )
        assert m.detection_error == pytest.approx(best, abs=1e-12)


class TestRoc:
    def test_perfect_auc(self):
        points = roc_curve([4, 3, 1, 0], [1, 1, 0, 0])
        assert auc(points) == pytest.approx(1.0)

    def test_staircase_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal(400)
        labels = (rng.random(400) < 0.25).astype(int)
        pts = roc_curve(scores, labels)
        np.testing.assert_allclose(pts[0], [0, 0])
        np.testing.assert_allclose(pts[-1], [1, 1])
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)

    def test_random_scores_auc_near_half(self):
        rng = np.random.default_rng(4)
        n = 10_000
        scores = rng.standard_normal(n)
        labels = (rng.random(n) < 0.5).astype(int)
        assert 0.47 <= auc_score(scores, labels) <= 0.53

    def test_reversed_scores_flip_auc(self):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal(500)
        labels = (scores + 0.8 * rng.standard_normal(500) > 0.5).astype(int)
        a = auc_score(scores, labels)
        b = auc_score(-scores, labels)
        assert a + b == pytest.approx(1.0, abs=1e-9)

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(6)
        scores = rng.standard_normal(500)
        labels = (rng.random(500) < 0.3).astype(int)
        a = auc_score(scores, labels)
        b = auc_score(np.exp(scores) + 3 * scores, labels)
        assert a == pytest.approx(b, abs=1e-12)


class TestBaseline:
    def test_single_component_matches_fitted_gaussian(self):
        rng = np.random.default_rng(7)
        mean = np.array([1.0, -2.0, 0.5])
        std = np.array([0.5, 2.0, 1.0])
        X = mean[:, None] + std[:, None] * rng.standard_normal((3, 4000))
        model = OnlineDiagonalGMM(k=1, alpha=0.9, seed=0).fit_initial(X)
        np.testing.assert_allclose(model.means[0], mean, atol=0.1)
        np.testing.assert_allclose(np.sqrt(model.vars[0]), std, rtol=0.1)
        x = X[:, :10]
        d = x - model.means[0][:, None]
        expected = 0.5 * (
            3 * np.log(2 * np.pi)
            + np.log(model.vars[0]).sum()
            + (d * d / model.vars[0][:, None]).sum(axis=0)
        )
        np.testing.assert_allclose(model.score_cols(x), expected, rtol=1e-10)

    def test_frozen_scoring_is_pointwise(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((4, 300))
        model = OnlineDiagonalGMM(k=3, alpha=0.9, seed=1).fit_initial(X)
        batch = rng.standard_normal((4, 50))
        perm = rng.permutation(50)
        np.testing.assert_allclose(
            model.score_cols(batch[:, perm]), model.score_cols(batch)[perm], rtol=1e-12
        )

    def test_update_tracks_shifting_mean(self):
        rng = np.random.default_rng(9)
        model = OnlineDiagonalGMM(k=1, alpha=0.9, seed=2)
        model.fit_initial(rng.standard_normal((2, 500)))
        for _ in range(80):
            model.update(5.0 + rng.standard_normal((2, 20)))
        np.testing.assert_allclose(model.means[0], [5.0, 5.0], atol=0.3)
