import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emoreact import metrics as M


def f1_reference(preds, gold, n):
    out = []
    for k in range(n):
        tp = sum(p == k and g == k for p, g in zip(preds, gold))
        fp = sum(p == k and g != k for p, g in zip(preds, gold))
        fn = sum(p != k and g == k for p, g in zip(preds, gold))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return out


labels = st.integers(0, 4)
pairs = st.lists(st.tuples(labels, labels), max_size=60)


class TestConfusion:
    def test_perfect(self):
        c = M.confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert c.fp.sum() == 0 and c.fn.sum() == 0
        assert list(c.tp) == [1, 1, 2]

    def test_counting(self):
        c = M.confusion([0, 1], [1, 1], 2)
        assert (c.tp[0], c.fp[0]) == (0, 1)
        assert (c.tp[1], c.fn[1]) == (1, 1)

    def test_empty(self):
        c = M.confusion([], [], 3)
        assert c.tp.sum() == c.fp.sum() == c.fn.sum() == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            M.confusion([0], [0, 1], 2)
        with pytest.raises(ValueError):
            M.confusion([2], [0], 2)

    @settings(max_examples=100, deadline=None)
    @given(pairs)
    def test_support_invariant(self, data):
        preds, gold = [p for p, _ in data], [g for _, g in data]
        c = M.confusion(preds, gold, 5)
        assert c.tp.sum() + c.fn.sum() == len(gold)
        assert c.tp.sum() + c.fp.sum() == len(preds)


class TestMacroF1:
    def test_perfect(self):
        assert M.task_metrics([0, 1, 2, 3, 4], [0, 1, 2, 3, 4], "reaction").macro_f1 == 1.0

    def test_half(self):
        c = M.ConfusionCounts(np.array([1]), np.array([1]), np.array([1]))
        m = M.macro_f1(c)
        assert (m.precision[0], m.recall[0], m.f1[0]) == (0.5, 0.5, 0.5)

    def test_absent_class_scores_zero(self):
        m = M.task_metrics([0, 0, 1], [0, 0, 1], "reaction")
        assert m.f1[0] == 1.0 and m.f1[4] == 0.0
        assert m.macro_f1 == pytest.approx(0.4)

    def test_single_class_equals_accuracy(self):
        m = M.macro_f1(M.confusion([0, 0, 0], [0, 0, 0], 1))
        assert m.macro_f1 == 1.0

    @settings(max_examples=100, deadline=None)
    @given(pairs)
    def test_matches_reference(self, data):
        preds, gold = [p for p, _ in data], [g for _, g in data]
        m = M.macro_f1(M.confusion(preds, gold, 5))
        np.testing.assert_allclose(m.f1, f1_reference(preds, gold, 5), atol=1e-12)
        assert 0.0 <= m.macro_f1 <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(pairs, st.permutations(range(5)))
    def test_permutation_invariance(self, data, perm):
        preds, gold = [p for p, _ in data], [g for _, g in data]
        a = M.macro_f1(M.confusion(preds, gold, 5)).macro_f1
        b = M.macro_f1(M.confusion([perm[p] for p in preds], [perm[g] for g in gold], 5)).macro_f1
        assert a == pytest.approx(b, abs=1e-12)

    def test_json_layout(self):
        d = M.task_metrics([0, 1], [0, 1], "emotion").to_json()
        assert d["task"] == "emotion"
        assert set(d["per_class"]["anger"]) == {"p", "r", "f1"}
        assert set(d["macro"]) == {"p", "r", "f1"}
        assert d["splits"] == 1


class TestAggregate:
    def make(self, f1s):
        return [M.TaskMetrics("x", ("a",), np.array([v]), np.array([v]), np.array([v])) for v in f1s]

    def test_mean_and_population_std(self):
        agg = M.aggregate_splits(self.make([0.4, 0.5, 0.6]))
        assert agg.macro_f1 == pytest.approx(0.5)
        assert agg.std["macro"]["f1"] == pytest.approx(0.0816496580927726, abs=1e-12)
        assert agg.splits == 3

    def test_identical(self):
        agg = M.aggregate_splits(self.make([0.7, 0.7]))
        assert agg.std["macro"]["f1"] == 0.0

    def test_single(self):
        agg = M.aggregate_splits(self.make([0.3]))
        assert agg.macro_f1 == pytest.approx(0.3) and agg.std["macro"]["f1"] == 0.0

    def test_shape_mismatch(self):
        other = M.TaskMetrics("x", ("a", "b"), np.zeros(2), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            M.aggregate_splits(self.make([0.3]) + [other])
        with pytest.raises(ValueError):
            M.aggregate_splits([])

    def test_reports(self):
        r1 = M.MetricsReport({"reaction": M.task_metrics([0, 1], [0, 1], "reaction")})
        r2 = M.MetricsReport({"reaction": M.task_metrics([0, 0], [0, 1], "reaction")})
        agg = M.aggregate_splits([r1, r2])
        assert agg["reaction"].splits == 2
        with pytest.raises(ValueError):
            M.aggregate_splits([r1, M.MetricsReport({"emotion": M.task_metrics([0], [0], "emotion")})])


class TestTable:
    def test_layout(self):
        rows = {"Plain": M.task_metrics([0, 1, 2], [0, 1, 1], "reaction"),
                "Constr": M.task_metrics([0, 1, 1], [0, 1, 1], "reaction")}
        text = M.render_table(rows, "Reactions")
        lines = text.splitlines()
        assert lines[0] == "Reactions"
        assert "Macro Avg" in lines[1] and "HAHA" in lines[1]
        assert lines[3].startswith("Plain") and lines[4].startswith("Constr")
        assert len({len(line) for line in lines[1:]}) == 1

    def test_std_in_brackets(self):
        agg = M.aggregate_splits([M.task_metrics([0], [0], "reaction"), M.task_metrics([1], [0], "reaction")])
        assert "(0." in M.render_table({"m": agg})
