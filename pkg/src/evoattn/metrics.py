"""Confusion counts and binary classification metrics.

Metrics with a zero denominator return None rather than a silent 0; JSON
reports carry those as null.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def accumulate(predictions, labels) -> ConfusionCounts:
    """Tally confusion counts, with label 1 as the positive class."""
    if len(predictions) != len(labels):
        raise ValidationError(f"length mismatch: {len(predictions)} predictions, {len(labels)} labels")
    if not labels:
        raise ValidationError("cannot accumulate over empty inputs")
    tp = fp = fn = tn = 0
    for pred, label in zip(predictions, labels):
        if pred not in (0, 1) or label not in (0, 1):
            raise ValidationError(f"predictions and labels must be 0 or 1, got ({pred}, {label})")
        if label == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def precision(counts: ConfusionCounts) -> float | None:
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else None


def recall(counts: ConfusionCounts) -> float | None:
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else None


def f1_from_rates(p: float | None, r: float | None) -> float | None:
    """Harmonic mean 2PR / (P + R); None when undefined or P + R == 0."""
    if p is None or r is None or p + r == 0:
        return None
    return 2.0 * p * r / (p + r)


def f1(counts: ConfusionCounts) -> float | None:
    return f1_from_rates(precision(counts), recall(counts))


def accuracy(counts: ConfusionCounts) -> float | None:
    return (counts.tp + counts.tn) / counts.total if counts.total else None


def metrics_report(counts: ConfusionCounts) -> dict:
    return {
        "precision": precision(counts),
        "recall": recall(counts),
        "f1": f1(counts),
        "accuracy": accuracy(counts),
        "counts": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn},
    }


def metrics_report_json(counts: ConfusionCounts, f1_digits: int | None = None) -> str:
    """UTF-8 JSON report; optionally rounds F1 for display."""
    report = metrics_report(counts)
    if f1_digits is not None and report["f1"] is not None:
        report["f1"] = round(report["f1"], f1_digits)
    return json.dumps(report)
