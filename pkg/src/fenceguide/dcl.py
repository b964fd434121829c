"""Directional connectivity loss.

Every pixel of a soft fence mask is scored by its best match among eight
5x5 line detectors through that pixel; the loss is the negative mean score.
Connected thin structures fill a whole line and score up to 5, isolated
pixels score 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

FEATURE_ANGLES = (0.0, 26.6, 45.0, 63.4, 90.0, 116.6, 135.0, 153.4)


@dataclass(frozen=True)
class DirectionalFeature:
    cells: np.ndarray  # 5x5 {0,1}
    angle_label: float

    @property
    def offsets(self) -> list:
        rows, cols = np.nonzero(self.cells)
        return [(int(r) - 2, int(c) - 2) for r, c in zip(rows, cols)]


def _line_points(angle: float) -> list:
    """Five (x, y) lattice points, y up, of the centred line at ``angle``."""
    xs = range(-2, 3)
    if angle == 0.0:
        return [(x, 0) for x in xs]
    if angle == 90.0:
        return [(0, y) for y in xs]
    if angle == 45.0:
        return [(x, x) for x in xs]
    if angle == 135.0:
        return [(x, -x) for x in xs]
    # slope 1/2 rasterized with round-half-away-from-zero so the line is
    # point symmetric about the centre: (-2,-1) (-1,-1) (0,0) (1,1) (2,1)
    half = [(x, int(np.sign(x) * np.floor(abs(x) / 2 + 0.5))) for x in xs]
    if angle == 26.6:
        return half
    if angle == 63.4:
        return [(y, x) for x, y in half]
    if angle == 116.6:
        return [(-y, x) for x, y in half]
    if angle == 153.4:
        return [(-x, y) for x, y in half]
    raise ValueError(f"no feature at angle {angle}")


def directional_features() -> list:
    """The fixed bank of eight 5x5 directional line features."""
    bank = []
    for angle in FEATURE_ANGLES:
        cells = np.zeros((5, 5), dtype=np.uint8)
        for x, y in _line_points(angle):
            cells[2 - y, 2 + x] = 1
        bank.append(DirectionalFeature(cells=cells, angle_label=angle))
    return bank


def feature_offsets() -> np.ndarray:
    """(8, 5, 2) array of (drow, dcol) per feature, row-major within a feature."""
    return np.array([f.offsets for f in directional_features()], dtype=np.intp)


_OFFSETS = feature_offsets()


def as_soft_mask(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"soft mask must be 2D, got shape {y.shape}")
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("soft mask values must lie in [0, 1]")
    return y


def connectivity_response(y):
    """``(map, argmax)``: best feature sum per pixel and the feature that gave it."""
    return kernels.directional_response(as_soft_mask(y), _OFFSETS)


def connectivity_map(y) -> np.ndarray:
    return connectivity_response(y)[0]


def dcl(y) -> float:
    y = as_soft_mask(y)
    return -float(connectivity_map(y).mean())


def dcl_gradient(y) -> np.ndarray:
    """Subgradient of :func:`dcl` using the lowest-index argmax at ties."""
    y = as_soft_mask(y)
    _, arg = kernels.directional_response(y, _OFFSETS)
    return kernels.directional_scatter(arg, _OFFSETS, -1.0 / y.size)


def dcl_and_gradient(y):
    y = as_soft_mask(y)
    cmap, arg = kernels.directional_response(y, _OFFSETS)
    return -float(cmap.mean()), kernels.directional_scatter(arg, _OFFSETS, -1.0 / y.size)


def argmax_margin(y) -> np.ndarray:
    """Gap between the best and second-best feature sum at every pixel."""
    y = as_soft_mask(y)
    h, w = y.shape
    yp = np.pad(y, 2)
    sums = np.empty((len(_OFFSETS), h, w))
    for k, feat in enumerate(_OFFSETS):
        acc = np.zeros((h, w))
        for dr, dc in feat:
            acc = acc + yp[2 + dr:2 + dr + h, 2 + dc:2 + dc + w]
        sums[k] = acc
    top2 = np.sort(sums, axis=0)[-2:]
    return top2[1] - top2[0]
