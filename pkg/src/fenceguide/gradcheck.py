"""Finite-difference checks for the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dcl import argmax_margin, dcl, dcl_gradient

REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    masks: int
    tested: int
    passed: int
    max_rel_err: float

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.tested if self.tested else 0.0


def relative_error(a, b, floor: float = REL_FLOOR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_dcl_gradient(y, eps: float = 1e-4) -> np.ndarray:
    """Central differences of :func:`fenceguide.dcl.dcl`, one coordinate at a time."""
    y = np.array(y, dtype=np.float64)
    g = np.empty_like(y)
    for idx in np.ndindex(y.shape):
        old = y[idx]
        y[idx] = old + eps
        fp = dcl(y)
        y[idx] = old - eps
        fm = dcl(y)
        y[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def dcl_gradcheck(seed: int = 0, size: int = 16, count: int = 20, eps: float = 1e-4,
                  rtol: float = 1e-5) -> GradCheckResult:
    """Compare analytic and numeric DCL gradients on ``count`` random masks.

    Values are drawn away from 0 and 1 so that ``y +- eps`` stays a valid soft
    mask, and a draw is kept only if every pixel's best feature beats the
    runner-up by more than ``10 * eps`` so the loss is smooth around it.
    """
    rng = np.random.default_rng(seed)
    tested = passed = 0
    worst = 0.0
    for _ in range(count):
        y = rng.uniform(0.01, 0.99, size=(size, size))
        while argmax_margin(y).min() <= 10 * eps:
            y = rng.uniform(0.01, 0.99, size=(size, size))
        err = relative_error(dcl_gradient(y), numeric_dcl_gradient(y, eps))
        tested += err.size
        passed += int(np.count_nonzero(err <= rtol))
        worst = max(worst, float(err.max()))
    return GradCheckResult(masks=count, tested=tested, passed=passed, max_rel_err=worst)
