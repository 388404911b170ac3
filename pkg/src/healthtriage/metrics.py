"""Accuracy and macro-F1 for single-label (top-1) and multi-label decisions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClassStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: dict[str, ClassStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for name, s in self.per_class.items()
            },
        }


def _f1(tp: int, fp: int, fn: int) -> ClassStats:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassStats(precision=precision, recall=recall, f1=f1, support=tp + fn)


def _metrics_from_counts(
    accuracy: float, counts: dict[str, tuple[int, int, int]]
) -> Metrics:
    per_class = {name: _f1(*c) for name, c in counts.items()}
    # Macro average over classes with any support in gold or predictions.
    scored = [s.f1 for name, s in per_class.items()
              if s.support > 0 or counts[name][1] > 0]
    macro = float(np.mean(scored)) if scored else 0.0
    return Metrics(accuracy=accuracy, macro_f1=macro, per_class=per_class)


def evaluate_single_label(gold: list[str], pred: list[str], label_names: list[str]) -> Metrics:
    """Top-1 protocol: accuracy over exact matches, macro-F1 from one-vs-rest counts."""
    if len(gold) != len(pred):
        raise ValueError("gold and prediction lengths differ")
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    counts = {}
    for name in label_names:
        tp = sum(1 for g, p in zip(gold, pred) if g == name and p == name)
        fp = sum(1 for g, p in zip(gold, pred) if g != name and p == name)
        fn = sum(1 for g, p in zip(gold, pred) if g == name and p != name)
        counts[name] = (tp, fp, fn)
    return _metrics_from_counts(correct / len(gold) if gold else 0.0, counts)


def evaluate_multilabel(gold: list[set], pred: list[set], label_names: list[str]) -> Metrics:
    """Multi-label protocol: subset accuracy, macro-F1 over per-label decisions."""
    if len(gold) != len(pred):
        raise ValueError("gold and prediction lengths differ")
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    counts = {}
    for name in label_names:
        tp = sum(1 for g, p in zip(gold, pred) if name in g and name in p)
        fp = sum(1 for g, p in zip(gold, pred) if name not in g and name in p)
        fn = sum(1 for g, p in zip(gold, pred) if name in g and name not in p)
        counts[name] = (tp, fp, fn)
    return _metrics_from_counts(correct / len(gold) if gold else 0.0, counts)


def top1_label(probabilities: dict[str, float]) -> str:
    """Argmax label; exact ties go to the lexicographically smallest name."""
    best_name = None
    best_p = -1.0
    for name in sorted(probabilities):
        p = probabilities[name]
        if p > best_p:
            best_name = name
            best_p = p
    return best_name


def top1_from_matrix(probs: np.ndarray, label_names: list[str]) -> list[str]:
    order = sorted(range(len(label_names)), key=lambda i: label_names[i])
    ordered = probs[:, order]
    picks = np.argmax(ordered, axis=1)  # first maximum = smallest name on ties
    return [label_names[order[i]] for i in picks]


def render_metrics_table(rows: list[tuple[str, Metrics]]) -> str:
    """Plain text table: one row per model/variant with Accuracy and F1."""
    name_width = max(len("Model"), *(len(name) for name, _ in rows)) if rows else 5
    lines = [f"{'Model'.ljust(name_width)}  Accuracy  F1"]
    lines.append("-" * len(lines[0]))
    for name, m in rows:
        lines.append(f"{name.ljust(name_width)}  {m.accuracy:.3f}     {m.macro_f1:.3f}")
    return "\n".join(lines)
