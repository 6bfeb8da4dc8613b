"""Pixel confusion counts and overlap scores for binary masks.

Counts are exact Python integers; ratios are float64. When both masks are
empty Dice and Jaccard are defined as 1.0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeMismatchError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )


@dataclass(frozen=True)
class MetricsResult:
    dice: float
    jaccard: float
    accuracy: float

    def as_dict(self) -> dict:
        return asdict(self)

    def percent(self) -> dict:
        return {k: 100.0 * v for k, v in asdict(self).items()}


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob_map >= threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def _as_bool(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} mask must contain only 0 and 1")
    return arr.astype(bool)


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    p, t = _as_bool(pred, "pred"), _as_bool(truth, "truth")
    if p.shape != t.shape:
        raise ShapeMismatchError(f"pred shape {p.shape} != truth shape {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, tn=p.size - tp - fp - fn, fp=fp, fn=fn)


def jaccard(counts: ConfusionCounts) -> float:
    """Intersection over union, ``tp / (tp + fp + fn)``."""
    union = counts.tp + counts.fp + counts.fn
    return 1.0 if union == 0 else counts.tp / union


def dice(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else 2 * counts.tp / denom


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise ValueError("accuracy of an empty comparison is undefined")
    return (counts.tp + counts.tn) / counts.total


def scores(counts: ConfusionCounts) -> MetricsResult:
    return MetricsResult(dice=dice(counts), jaccard=jaccard(counts), accuracy=accuracy(counts))


def evaluate_masks(pred: np.ndarray, truth: np.ndarray) -> MetricsResult:
    return scores(confusion(pred, truth))
