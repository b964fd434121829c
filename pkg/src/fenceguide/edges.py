"""Canny edge detection producing the binary edge maps fed to the guidance stage."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .imagecore import as_gray

SOBEL_X = np.array([[-1, 0, 1],
                    [-2, 0, 2],
                    [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()  # rows grow downward

ORIENTATION_BINS = (0, 45, 90, 135)


class ImageTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    low_threshold: float = 30.0
    high_threshold: float = 90.0

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be > 0")
        if not 0 < self.low_threshold <= self.high_threshold:
            raise ValueError("need 0 < low_threshold <= high_threshold")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps over radius ceil(3 sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with border replication. Returns float64."""
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def sobel_gradients(img):
    """Sobel derivatives, L2 magnitude and orientation quantized to 0/45/90/135 degrees.

    Orientation is the gradient direction measured counter-clockwise from
    the +column axis with the vertical axis pointing up, folded into
    [0, 180). ``gy`` itself is the derivative along increasing row index.
    """
    f = np.asarray(img, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise ImageTooSmallError(f"need at least 3x3 pixels, got {f.shape}")
    gx = ndimage.correlate(f, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(f, SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(-gy, gx)) % 180.0
    orientation = (np.floor(angle / 45.0 + 0.5).astype(np.int64) % 4) * 45
    return gx, gy, mag, orientation


# neighbour offsets along the gradient direction, (drow, dcol); rows grow downward
_NMS_STEPS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


def non_max_suppression(mag: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Zero every pixel that is not a local maximum along its gradient direction.

    On exact plateaus the pixel further along the forward step wins, so a
    symmetric ridge two pixels wide collapses to one.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    out = np.zeros_like(mag)
    for angle, (dr, dc) in _NMS_STEPS.items():
        sel = orientation == angle
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        back = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep = sel & (mag > fwd) & (mag >= back) & (mag > 0)
        out[keep] = mag[keep]
    return out


def canny(img, params: CannyParams | None = None) -> np.ndarray:
    """Thin binary edge map: blur, Sobel, non-max suppression, hysteresis."""
    params = params or CannyParams()
    img = as_gray(img)
    smoothed = gaussian_blur(img, params.gaussian_sigma)
    _, _, mag, orientation = sobel_gradients(smoothed)
    thin = non_max_suppression(mag, orientation)
    weak = (thin >= params.low_threshold).astype(np.uint8)
    strong = (thin >= params.high_threshold).astype(np.uint8)
    return kernels.hysteresis(strong, weak)
