"""Detection metrics and the shared quantile convention."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import Empty, OutOfRange, SizeMismatch


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    degenerate: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def f1_score(predicted, truth) -> Metrics:
    """Precision, recall and F1 of a boolean detection.

    Any zero denominator gives 0 for that quantity and sets ``degenerate``.
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise SizeMismatch(f"predicted has shape {predicted.shape}, truth {truth.shape}")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    degenerate = False
    if tp + fp:
        p = tp / (tp + fp)
    else:
        p, degenerate = 0.0, True
    if tp + fn:
        r = tp / (tp + fn)
    else:
        r, degenerate = 0.0, True
    if p + r > 0:
        f1 = 2 * p * r / (p + r)
    else:
        f1, degenerate = 0.0, True
    return Metrics(tp, fp, fn, tn, p, r, f1, degenerate)


def empirical_quantile(values, q: float) -> float:
    """Type-7 quantile: linear interpolation between order statistics."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise Empty("quantile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise OutOfRange(f"quantile level must lie in [0, 1], got {q}")
    s = np.sort(values)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    return float(s[lo] + (h - lo) * (s[hi] - s[lo]))
