"""Pixelwise precision / recall / F-measure and their aggregation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imagecore import as_mask, check_same_shape


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class PRF(NamedTuple):
    precision: float
    recall: float
    f_measure: float
    degenerate: bool = False


def confusion(pred, gt) -> ConfusionCounts:
    """Counts with fence (1) as the positive class."""
    pred = as_mask(pred).astype(bool)
    gt = as_mask(gt).astype(bool)
    check_same_shape(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def f_measure(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both inputs are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf(c: ConfusionCounts) -> PRF:
    """Precision, recall and F. Any 0/0 yields 0 and sets ``degenerate``."""
    degenerate = False
    if c.tp + c.fp == 0:
        p, degenerate = 0.0, True
    else:
        p = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        r, degenerate = 0.0, True
    else:
        r = c.tp / (c.tp + c.fn)
    if p + r == 0:
        return PRF(p, r, 0.0, True)
    return PRF(p, r, f_measure(p, r), degenerate)


def prf_tolerant(pred, gt, tolerance: int) -> PRF:
    """P/R where a pixel counts as matched within ``tolerance`` px (square neighbourhood).

    With ``tolerance=0`` this equals ``prf(confusion(pred, gt))``.
    """
    pred = as_mask(pred).astype(bool)
    gt = as_mask(gt).astype(bool)
    check_same_shape(pred, gt)
    if tolerance <= 0:
        return prf(confusion(pred, gt))
    st = np.ones((2 * tolerance + 1,) * 2, dtype=bool)
    hit_p = int(np.count_nonzero(pred & ndimage.binary_dilation(gt, st)))
    hit_r = int(np.count_nonzero(gt & ndimage.binary_dilation(pred, st)))
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    p = hit_p / n_pred if n_pred else 0.0
    r = hit_r / n_gt if n_gt else 0.0
    return PRF(p, r, f_measure(p, r), n_pred == 0 or n_gt == 0 or p + r == 0)


@dataclass
class MetricSummary:
    per_image: list
    mean: tuple  # (P, R, F)
    std: tuple   # population standard deviation

    @property
    def f_measure(self) -> float:
        return self.mean[2]


def aggregate(per_image) -> MetricSummary:
    """Mean and population standard deviation of each metric."""
    rows = [tuple(r[:3]) for r in per_image]
    if not rows:
        raise ValueError("cannot aggregate an empty list")
    arr = np.asarray(rows, dtype=np.float64)
    return MetricSummary(per_image=list(per_image),
                         mean=tuple(float(v) for v in arr.mean(axis=0)),
                         std=tuple(float(v) for v in arr.std(axis=0)))


def aggregate_folds(per_image, k: int) -> MetricSummary:
    """Split into ``k`` contiguous folds, average each, then summarize the fold means."""
    rows = list(per_image)
    if k < 1 or k > len(rows):
        raise ValueError(f"need 1 <= folds <= {len(rows)}")
    folds = np.array_split(np.arange(len(rows)), k)
    means = [aggregate([rows[i] for i in idx]).mean for idx in folds]
    return aggregate(means)
