"""Tests for AUC / CLA metrics, slice reports and the A/B session metric.

Derived values use independent oracles: brute-force pair counting for AUC
and an exhaustive threshold sweep for CLA.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satpred.data import SliceTags, TrainingExample
from satpred.metrics import (
    MetricsReport,
    UndefinedMetricError,
    ab_compare_cus,
    evaluate_auc,
    evaluate_cla,
    hash_group,
    select_threshold,
    simulate_cus,
    slice_report,
)


def auc_bruteforce(scores, labels):
    """O(n^2) pairwise oracle: P(s_pos > s_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def cla_bruteforce(scores, labels, floor):
    """Exhaustive sweep over all observed thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_dis = (labels == 0).sum()
    best_recall, best_theta = 0.0, None
    for theta in sorted(set(scores.tolist())):
        flagged = scores <= theta
        tp = (flagged & (labels == 0)).sum()
        if flagged.sum() == 0:
            continue
        if tp / flagged.sum() >= floor:
            recall = tp / n_dis
            if recall > best_recall or (recall == best_recall and best_theta is None):
                best_recall, best_theta = recall, theta
    return best_recall, best_theta


class TestAuc:
    def test_perfect_separation(self):
        assert evaluate_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_reversed_separation(self):
        assert evaluate_auc([0.9, 0.8, 0.1], [0, 0, 1]) == 0.0

    def test_all_tied_is_half(self):
        assert evaluate_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            evaluate_auc([0.1, 0.9], [1, 1])

    def test_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 60))
            scores = rng.choice([0.1, 0.3, 0.5, 0.7], size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert abs(evaluate_auc(scores, labels)
                       - auc_bruteforce(scores, labels)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 50))
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        a = evaluate_auc(scores, labels)
        b = evaluate_auc(1 / (1 + np.exp(-3 * scores)), labels)
        assert abs(a - b) < 1e-12


class TestCla:
    def test_perfect_scores_full_recall(self):
        cla, theta = evaluate_cla([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], 0.85)
        assert cla == 1.0 and theta == 0.2

    def test_no_qualifying_threshold(self):
        # every flagging set is majority-satisfied
        cla, theta = evaluate_cla([0.1, 0.2, 0.3], [1, 1, 0], 0.85)
        assert cla == 0.0 and theta is None

    def test_floor_zero_full_recall(self):
        scores = [0.3, 0.6, 0.1, 0.9]
        labels = [0, 1, 0, 1]
        cla, theta = evaluate_cla(scores, labels, 0.0)
        assert cla == 1.0
        # lowest threshold achieving full recall
        assert theta == 0.3

    def test_tie_break_prefers_lowest_theta(self):
        # thetas 0.2 and 0.3 both give recall 1.0 at precision 1.0
        cla, theta = evaluate_cla([0.1, 0.2, 0.3, 0.9], [0, 0, 0, 1], 0.85)
        assert cla == 1.0 and theta == 0.3  # 0.3 flags all three dissatisfied
        cla, theta = evaluate_cla([0.1, 0.2, 0.9], [0, 0, 1], 0.85)
        assert theta == 0.2

    def test_no_dissatisfied_raises(self):
        with pytest.raises(UndefinedMetricError):
            evaluate_cla([0.5, 0.6], [1, 1], 0.85)

    def test_matches_exhaustive_sweep(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 50))
            scores = np.round(rng.random(n), 2)
            labels = rng.integers(0, 2, size=n)
            if (labels == 0).sum() == 0:
                labels[0] = 0
            floor = float(rng.choice([0.0, 0.5, 0.85, 1.0]))
            got = evaluate_cla(scores, labels, floor)
            want = cla_bruteforce(scores, labels, floor)
            assert got[0] == want[0]
            assert got[1] == want[1]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_monotone_in_floor(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        scores = rng.random(n)
        labels = rng.integers(0, 2, size=n)
        if (labels == 0).sum() == 0:
            labels[0] = 0
        prev = None
        for floor in (0.0, 0.25, 0.5, 0.75, 0.9, 1.0):
            cla, _ = evaluate_cla(scores, labels, floor)
            if prev is not None:
                assert cla <= prev
            prev = cla

    def test_select_threshold_matches_cla(self):
        scores = [0.1, 0.2, 0.8, 0.9]
        labels = [0, 0, 1, 1]
        assert select_threshold(scores, labels, 0.85) == evaluate_cla(
            scores, labels, 0.85
        )[1]


def make_example(sid, gt, error="NONE", rare=False, domain=0):
    return TrainingExample(
        session_id=sid, turns=(), label=gt, domain_intent=0,
        slices=SliceTags(error, rare, domain), ground_truth=gt,
    )


class TestSliceReport:
    def _data(self):
        rng = np.random.default_rng(2)
        examples, scores = [], []
        for i in range(120):
            gt = int(rng.random() < 0.6)
            error = "NONE" if gt else str(rng.choice(["ASR", "IR"]))
            examples.append(make_example(f"s{i}", gt, error,
                                         rare=bool(i % 5 == 0),
                                         domain=int(i % 3)))
            scores.append(0.7 * gt + 0.3 * rng.random())
        return np.array(scores), examples

    def test_report_structure(self):
        scores, examples = self._data()
        rep = slice_report(scores, examples, theta=0.3, model_id="m",
                           corpus_id="c")
        names = {r.name for r in rep.slices}
        assert {"domain=0", "domain=1", "domain=2", "rare=True",
                "rare=False"} <= names
        assert any(n.startswith("error=") for n in names)
        assert rep.total == 120

    def test_recall_counts_only_on_error_rows(self):
        scores, examples = self._data()
        rep = slice_report(scores, examples, theta=0.3)
        for row in rep.slices:
            if row.name.startswith("error="):
                assert row.recalled_at_theta is not None
            else:
                assert row.recalled_at_theta is None

    def test_recall_at_theta_oracle(self):
        scores, examples = self._data()
        theta = 0.3
        rep = slice_report(scores, examples, theta=theta)
        for row in rep.slices:
            if not row.name.startswith("error="):
                continue
            key = row.name.split("=", 1)[1]
            expect = sum(
                1 for s, ex in zip(scores, examples)
                if ex.slices.error_type == key and ex.ground_truth == 0
                and s <= theta
            )
            assert row.recalled_at_theta == expect

    def test_missing_ground_truth_raises(self):
        ex = make_example("s", 1)
        ex = TrainingExample(ex.session_id, ex.turns, ex.label,
                             ex.domain_intent, ex.slices, ground_truth=None)
        with pytest.raises(UndefinedMetricError):
            slice_report(np.array([0.5]), [ex], theta=None)

    def test_json_and_table_render(self):
        scores, examples = self._data()
        rep = slice_report(scores, examples, theta=0.3, model_id="m")
        assert "domain=0" in rep.to_table()
        assert isinstance(rep.to_dict(), dict)
        assert "auc" in rep.to_json()


class TestCus:
    def test_hash_group_is_deterministic_binary(self):
        for sid in ("a", "b", "session-123"):
            g = hash_group(sid)
            assert g in (0, 1)
            assert hash_group(sid) == g

    def test_hash_group_roughly_balanced(self):
        groups = [hash_group(f"s{i}") for i in range(2000)]
        assert 0.4 < np.mean(groups) < 0.6

    def test_simulate_cus_hand_case(self):
        # one warranted clarification, one correct response, one miss
        examples = [
            make_example("a", 0, error="ASR"),  # clarified, warranted
            make_example("b", 1),               # responded, satisfied
            make_example("c", 0, error="IR"),   # responded, dissatisfied
        ]
        cus = simulate_cus([0.1, 0.9, 0.8], examples, theta=0.5)
        assert cus == pytest.approx(2 / 3)

    def test_no_gate_means_raw_satisfaction(self):
        examples = [make_example("a", 1), make_example("b", 0)]
        assert simulate_cus([0.9, 0.1], examples, theta=None) == 0.5

    def test_empty_group_raises(self):
        with pytest.raises(UndefinedMetricError):
            simulate_cus([], [], theta=0.5)

    def test_ab_compare_partitions_by_hash(self):
        examples = [make_example(f"s{i}", 1) for i in range(50)]
        scores = [0.9] * 50
        cus_a, cus_b = ab_compare_cus(scores, 0.5, scores, 0.5, examples)
        assert cus_a == 1.0 and cus_b == 1.0
