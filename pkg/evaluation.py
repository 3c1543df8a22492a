"""
evaluation.py - Confusion-matrix metrics with bots (label 1) as the
positive class, and mean / population-std aggregation across seeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from constants import METRIC_NAMES
from errors import LabelError, ShapeError

_logger = logging.getLogger("botdna.evaluation")

STD_CONVENTION = "population (divide by n)"


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class Metrics:
    precision:   float
    recall:      float
    f1:          float
    accuracy:    float
    specificity: float
    degenerate:  tuple[str, ...] = field(default=())     # metrics defined as 0 from 0/0

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(preds: Sequence[int], labels: Sequence[int]) -> Confusion:
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ShapeError(f"{p.size} predictions against {y.size} labels")
    for name, arr in (("labels", y), ("predictions", p)):
        if not np.all(np.isin(arr, (0, 1))):
            raise LabelError(f"{name} must be 0 or 1")
    return Confusion(tp=int(np.sum((p == 1) & (y == 1))),
                     fp=int(np.sum((p == 1) & (y == 0))),
                     fn=int(np.sum((p == 0) & (y == 1))),
                     tn=int(np.sum((p == 0) & (y == 0))))


def _ratio(num: float, den: float, name: str, degenerate: list[str]) -> float:
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def metrics(c: Confusion) -> Metrics:
    degenerate: list[str] = []
    precision   = _ratio(c.tp, c.tp + c.fp, "precision", degenerate)
    recall      = _ratio(c.tp, c.tp + c.fn, "recall", degenerate)
    f1          = _ratio(2 * precision * recall, precision + recall, "f1", degenerate)
    accuracy    = _ratio(c.tp + c.tn, c.total, "accuracy", degenerate)
    specificity = _ratio(c.tn, c.tn + c.fp, "specificity", degenerate)
    if degenerate:
        _logger.warning(f"degenerate metrics (0/0, reported as 0): {', '.join(degenerate)}")
    return Metrics(precision, recall, f1, accuracy, specificity, tuple(degenerate))


def aggregate(per_seed: Sequence[Mapping[str, float]]) -> tuple[dict[str, float], dict[str, float]]:
    """Arithmetic mean and population standard deviation per metric."""
    if not per_seed:
        raise ShapeError("nothing to aggregate")
    keys = list(per_seed[0])
    for row in per_seed[1:]:
        if set(row) != set(keys):
            raise ShapeError(f"metric keys differ: {sorted(keys)} vs {sorted(row)}")
    mean, std = {}, {}
    n = len(per_seed)
    for k in keys:
        values = [float(row[k]) for row in per_seed]
        m = math.fsum(values) / n
        mean[k] = m
        std[k]  = math.sqrt(math.fsum((v - m) ** 2 for v in values) / n)
    return mean, std


def format_percent(mean: float, std: float) -> str:
    """0.8534, 0.0123 → '85.34 ± 1.23'."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"
