import numpy as np
import pytest

from healthtriage.metrics import (
    Metrics,
    evaluate_multilabel,
    evaluate_single_label,
    render_metrics_table,
    top1_from_matrix,
    top1_label,
)


class TestSingleLabel:
    def test_all_correct(self):
        m = evaluate_single_label(["a", "b"], ["a", "b"], ["a", "b"])
        assert m.accuracy == 1.0 and m.macro_f1 == 1.0

    def test_hand_confusion_example(self):
        m = evaluate_single_label(["a", "b", "c"], ["a", "b", "b"], ["a", "b", "c"])
        assert m.accuracy == pytest.approx(2 / 3)
        assert m.per_class["a"].f1 == pytest.approx(1.0)
        assert m.per_class["b"].f1 == pytest.approx(2 / 3)
        assert m.per_class["c"].f1 == 0.0
        assert m.macro_f1 == pytest.approx(5 / 9)

    def test_class_without_any_support_excluded(self):
        m = evaluate_single_label(["a", "a"], ["a", "a"], ["a", "ghost"])
        assert m.macro_f1 == 1.0  # ghost has no gold or predicted support

    def test_matches_naive_recomputation(self):
        rng = np.random.default_rng(0)
        labels = ["a", "b", "c", "d"]
        for _ in range(20):
            gold = [labels[i] for i in rng.integers(0, 4, 30)]
            pred = [labels[i] for i in rng.integers(0, 4, 30)]
            m = evaluate_single_label(gold, pred, labels)
            # naive recount
            acc = sum(g == p for g, p in zip(gold, pred)) / len(gold)
            f1s = []
            for lab in labels:
                tp = sum(g == lab and p == lab for g, p in zip(gold, pred))
                fp = sum(g != lab and p == lab for g, p in zip(gold, pred))
                fn = sum(g == lab and p != lab for g, p in zip(gold, pred))
                if tp + fn == 0 and tp + fp == 0:
                    continue
                prec = tp / (tp + fp) if tp + fp else 0.0
                rec = tp / (tp + fn) if tp + fn else 0.0
                f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
            assert m.accuracy == pytest.approx(acc)
            assert m.macro_f1 == pytest.approx(float(np.mean(f1s)))


class TestMultilabel:
    def test_subset_accuracy(self):
        gold = [{"a"}, {"a", "b"}, set()]
        pred = [{"a"}, {"a"}, set()]
        m = evaluate_multilabel(gold, pred, ["a", "b"])
        assert m.accuracy == pytest.approx(2 / 3)

    def test_per_label_counts(self):
        gold = [{"a"}, {"b"}]
        pred = [{"a", "b"}, {"b"}]
        m = evaluate_multilabel(gold, pred, ["a", "b"])
        assert m.per_class["a"].f1 == pytest.approx(1.0)
        assert m.per_class["b"].precision == pytest.approx(1 / 2)
        assert m.per_class["b"].recall == 1.0


class TestTop1:
    def test_tie_breaks_lexicographically(self):
        assert top1_label({"zeta": 0.5, "alpha": 0.5, "mid": 0.4}) == "alpha"

    def test_matrix_form_agrees(self):
        probs = np.array([[0.5, 0.5, 0.4], [0.1, 0.2, 0.9]])
        names = ["zeta", "alpha", "mid"]
        assert top1_from_matrix(probs, names) == ["alpha", "mid"]


class TestRenderTable:
    def test_three_decimal_row_format(self):
        m = Metrics(accuracy=0.8333333, macro_f1=0.7621)
        text = render_metrics_table([("ours", m)])
        assert "0.833" in text and "0.762" in text
        assert text.splitlines()[0].startswith("Model")
