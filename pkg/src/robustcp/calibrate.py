"""Vanilla split conformal prediction.

Threshold = the ceil((1-alpha)(n+1))-th smallest calibration score; when that
rank exceeds n the threshold is the explicit infinite sentinel and every
prediction set is the full label set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Guards float fuzz in (1-alpha)*(n+1): e.g. 0.9 * 10 evaluates slightly
# above 9 and would otherwise bump the rank by one.
_RANK_EPS = 1e-9


@dataclass(frozen=True)
class Threshold:
    """Calibrated score threshold; ``value is None`` encodes +infinity."""

    value: float | None
    level: float  # the alpha used
    n_cal: int

    @property
    def is_infinite(self) -> bool:
        return self.value is None


@dataclass
class PredictionSet:
    """Label subset for one test example, with per-label score diagnostics."""

    included: np.ndarray  # (K,) bool mask
    per_label_score: np.ndarray  # (K,)

    def __post_init__(self):
        self.included = np.asarray(self.included, dtype=bool)
        self.per_label_score = np.asarray(self.per_label_score, dtype=float)
        if self.included.shape != self.per_label_score.shape:
            raise ValueError("mask and scores must have matching shape")

    @property
    def size(self) -> int:
        return int(self.included.sum())

    @property
    def n_classes(self) -> int:
        return self.included.size

    def labels(self) -> np.ndarray:
        return np.flatnonzero(self.included)

    def contains(self, label: int) -> bool:
        return bool(self.included[label])


def conformal_rank(n: int, alpha: float) -> int:
    """The order-statistic rank ceil((1-alpha)(n+1)); may exceed n."""
    return max(1, math.ceil((1.0 - alpha) * (n + 1) - _RANK_EPS))


def conformal_quantile(cal_scores, alpha: float) -> Threshold:
    """Empirical conformal quantile of the calibration scores.

    Returns the k-th smallest score with k = ceil((1-alpha)(n+1)), or the
    infinite sentinel when k > n. Ties are handled positionally via a stable
    sort, so duplicate scores need no special casing.
    """
    scores = np.asarray(cal_scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("cal_scores must be a non-empty 1-D collection")
    if np.any(np.isnan(scores)):
        raise DataError("calibration scores contain NaN")
    if not np.all(np.isfinite(scores)):
        raise DataError("calibration scores must be finite")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = scores.size
    k = conformal_rank(n, alpha)
    if k > n:
        return Threshold(value=None, level=alpha, n_cal=n)
    value = float(np.sort(scores, kind="stable")[k - 1])
    return Threshold(value=value, level=alpha, n_cal=n)


def threshold_set(score_row, cutoff: float | None) -> PredictionSet:
    """Labels whose score is <= cutoff; ``None`` cutoff includes everything."""
    row = np.asarray(score_row, dtype=float)
    if row.ndim != 1:
        raise ValueError("score_row must be 1-D")
    if cutoff is None:
        mask = np.ones_like(row, dtype=bool)
    else:
        mask = row <= cutoff
    return PredictionSet(included=mask, per_label_score=row)


def predict_set(score_row, tau: Threshold) -> PredictionSet:
    """Prediction set at the calibrated threshold (inclusive comparison)."""
    return threshold_set(score_row, tau.value)


def predict_sets(score_rows, tau: Threshold) -> list[PredictionSet]:
    return [predict_set(row, tau) for row in np.asarray(score_rows, dtype=float)]


def evaluate(sets: list[PredictionSet], labels) -> tuple[float, float]:
    """(coverage, average set size) of prediction sets against true labels."""
    labels = np.asarray(labels, dtype=int)
    if len(sets) != labels.size:
        raise ValueError(f"{len(sets)} sets but {labels.size} labels")
    if not sets:
        return float("nan"), float("nan")
    covered = sum(s.contains(y) for s, y in zip(sets, labels))
    total = sum(s.size for s in sets)
    return covered / len(sets), total / len(sets)
