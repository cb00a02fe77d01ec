"""Binary confusion matrix and accuracy / recall / precision / F1.

The positive class is Cough.  Precision, recall and F1 fall back to 0 with a
degenerate flag when their denominator is zero.
"""

from __future__ import annotations

import csv
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

COUGH = "Cough"
OTHERS = "Others"

_LABEL_ALIASES = {
    "cough": COUGH,
    "c": COUGH,
    "1": COUGH,
    "positive": COUGH,
    "others": OTHERS,
    "other": OTHERS,
    "o": OTHERS,
    "0": OTHERS,
    "negative": OTHERS,
}


def parse_label(value) -> str:
    key = str(value).strip().lower()
    if key not in _LABEL_ALIASES:
        raise ValueError(f"unrecognized label {value!r}; expected Cough or Others")
    return _LABEL_ALIASES[key]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def swapped(self) -> "ConfusionMatrix":
        """The same outcomes with Others treated as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def accumulate(pairs: Iterable[tuple]) -> ConfusionMatrix:
    """Count ``(predicted, truth)`` label pairs."""
    tp = fp = fn = tn = 0
    for pred, truth in pairs:
        p = parse_label(pred) == COUGH
        t = parse_label(truth) == COUGH
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    recall: float
    precision: float
    f1: float
    degenerate: dict = field(default_factory=dict)

    def percent(self, digits: int = 1) -> dict:
        """Percentages rounded half-up, as tables print them (56.25 -> 56.3)."""
        q = Decimal(1).scaleb(-digits)
        return {
            k: float(Decimal(repr(100.0 * getattr(self, k))).quantize(q, rounding=ROUND_HALF_UP))
            for k in ("accuracy", "recall", "precision", "f1")
        }


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def compute(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    recall, r_deg = _ratio(cm.tp, cm.tp + cm.fn)
    precision, p_deg = _ratio(cm.tp, cm.tp + cm.fp)
    if precision + recall > 0:
        f1, f_deg = 2.0 * precision * recall / (precision + recall), False
    else:
        f1, f_deg = 0.0, True
    return MetricsReport(
        accuracy, recall, precision, f1, {"recall": r_deg, "precision": p_deg, "f1": f_deg}
    )


def normalize(cm: ConfusionMatrix) -> tuple[np.ndarray, list[bool]]:
    """Row-normalized matrix, rows = truth (Cough, Others), columns = prediction.

    Returns the matrix and a per-row flag set when that truth class is absent
    (the row is then left as zeros).
    """
    counts = np.array([[cm.tp, cm.fn], [cm.fp, cm.tn]], dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    flags = [bool(s == 0) for s in sums[:, 0]]
    out = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return out, flags


def report_dict(cm: ConfusionMatrix) -> dict:
    r = compute(cm)
    d = cm.as_dict()
    d.update(accuracy=r.accuracy, recall=r.recall, precision=r.precision, f1=r.f1)
    d["degenerate"] = r.degenerate
    d["percent"] = r.percent()
    return d


def read_pairs_csv(path) -> list[tuple[str, str]]:
    """Two-column CSV of ``predicted,truth``; an optional header row is skipped."""
    pairs = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{i + 1}: expected two columns")
            try:
                pairs.append((parse_label(row[0]), parse_label(row[1])))
            except ValueError:
                if i == 0:
                    continue
                raise
    return pairs
