import numpy as np
import pytest

from evomail.errors import EmptyInput, InsufficientCheckpoints
from evomail.explain import EvidencePath, PathStep
from evomail.metrics import (auc_score, classification_metrics, f1_score,
                             precision_at_k, stc_metric)


def path_of(*pairs):
    steps = tuple(PathStep(node_id=p[1], node_kind=p[0],
                           relation_to_previous=None, confidence=0.5)
                  for p in pairs)
    return EvidencePath(steps=steps, terminated_by="depth_cap")


class TestClassificationMetrics:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([1, 1, 0, 0])
        m = classification_metrics(scores, labels)
        assert (m.accuracy, m.precision, m.recall, m.f1, m.auc) == (1, 1, 1, 1, 1)

    def test_precision_at_2_hand_ranking(self):
        m = classification_metrics([0.9, 0.8, 0.2], [1, 0, 1], ks=[2])
        assert m.precision_at_k[2] == 0.5

    def test_all_labels_zero_convention(self):
        m = classification_metrics([0.9, 0.8], [0, 0])
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0

    def test_threshold_inclusive(self):
        m = classification_metrics([0.5], [1], threshold=0.5)
        assert m.recall == 1.0

    def test_auc_midrank_ties(self):
        # one tie across classes contributes half
        auc = auc_score(np.array([0.5, 0.5]), np.array([1, 0]))
        assert auc == 0.5
        auc2 = auc_score(np.array([0.9, 0.5, 0.5, 0.1]), np.array([1, 1, 0, 0]))
        # pairs: (0.9>0.5)=1, (0.9>0.1)=1, (0.5~0.5)=0.5, (0.5>0.1)=1
        assert auc2 == pytest.approx((1 + 1 + 0.5 + 1) / 4, abs=1e-12)

    def test_degenerate_single_class_auc_half(self):
        assert auc_score(np.array([0.3, 0.6]), np.array([1, 1])) == 0.5

    def test_random_scorer_auc_band(self):
        rng = np.random.default_rng(123)
        scores = rng.random(1000)
        labels = np.concatenate([np.ones(500), np.zeros(500)]).astype(int)
        auc = auc_score(scores, labels)
        assert 0.4 <= auc <= 0.6

    def test_precision_at_k_exceeding_n(self):
        assert precision_at_k(np.array([0.9, 0.1]), np.array([1, 0]), 10) == 0.5

    def test_metrics_in_unit_interval(self):
        rng = np.random.default_rng(7)
        m = classification_metrics(rng.random(50),
                                   rng.integers(0, 2, size=50), ks=[5, 10])
        for v in (m.accuracy, m.precision, m.recall, m.f1, m.auc,
                  *m.precision_at_k.values()):
            assert 0.0 <= v <= 1.0

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInput):
            classification_metrics([], [])
        with pytest.raises(EmptyInput):
            classification_metrics([0.5], [2])

    def test_f1_harmonic(self):
        assert f1_score([1, 1, 0], [1, 0, 0]) == pytest.approx(2 / 3, abs=1e-12)


class TestSTC:
    def test_identical_paths_unit_score(self):
        p = path_of(("email", "e1"), ("domain", "d1"))
        assert stc_metric([{"c1": p}, {"c1": p}]) == 1.0

    def test_disjoint_paths_zero(self):
        a = path_of(("email", "e1"))
        b = path_of(("domain", "d9"))
        assert stc_metric([{"c1": a}, {"c1": b}]) == 0.0

    def test_jaccard_one_third(self):
        a = path_of(("email", "a"), ("domain", "b"))
        b = path_of(("domain", "b"), ("url", "c"))
        assert stc_metric([{"c1": a}, {"c1": b}]) == pytest.approx(1 / 3)

    def test_skips_unmatched_campaigns(self):
        a = path_of(("email", "a"))
        b = path_of(("email", "a"))
        out = stc_metric([{"c1": a, "solo": a}, {"c1": b}])
        assert out == 1.0

    def test_mean_over_consecutive_pairs(self):
        a = path_of(("email", "a"))
        b = path_of(("email", "b"))
        assert stc_metric([{"c": a}, {"c": a}, {"c": b}]) == pytest.approx(0.5)

    def test_requires_two_checkpoints(self):
        with pytest.raises(InsufficientCheckpoints):
            stc_metric([{"c1": path_of(("email", "a"))}])

    def test_kind_is_part_of_identity(self):
        a = path_of(("email", "x"))
        b = path_of(("domain", "x"))
        assert stc_metric([{"c": a}, {"c": b}]) == 0.0
