"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable. Every
function here has the same signature and results as its compiled twin.
"""
import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)


def hysteresis(strong, weak):
    """Keep ``weak`` pixels 8-connected (transitively) to a ``strong`` pixel.

    ``strong`` must be a subset of ``weak``. Returns a uint8 {0,1} mask.
    """
    weak = np.asarray(weak, dtype=bool)
    strong = np.asarray(strong, dtype=bool) & weak
    labels, n = ndimage.label(weak, structure=_EIGHT)
    if n == 0:
        return np.zeros(weak.shape, dtype=np.uint8)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels].astype(np.uint8)


def directional_response(y, offsets):
    """Per-pixel max over features of the summed values under each feature.

    ``offsets`` has shape (n_features, n_cells, 2) holding (drow, dcol)
    pairs. Cells outside the image contribute zero. Ties pick the lowest
    feature index. Returns ``(response, argmax)``.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    h, w = y.shape
    offsets = np.asarray(offsets)
    pad = int(np.abs(offsets).max())
    yp = np.zeros((h + 2 * pad, w + 2 * pad))
    yp[pad:pad + h, pad:pad + w] = y
    best = None
    arg = np.zeros((h, w), dtype=np.int8)
    for k, feat in enumerate(offsets):
        acc = np.zeros((h, w))
        for dr, dc in feat:
            acc = acc + yp[pad + dr:pad + dr + h, pad + dc:pad + dc + w]
        if best is None:
            best = acc
        else:
            better = acc > best
            best = np.where(better, acc, best)
            arg[better] = k
    return best, arg


def directional_scatter(argmax, offsets, scale):
    """Adjoint of :func:`directional_response` for a fixed argmax.

    Adds ``scale`` at every in-bounds cell of the selected feature of each
    pixel.
    """
    argmax = np.asarray(argmax)
    h, w = argmax.shape
    offsets = np.asarray(offsets)
    pad = int(np.abs(offsets).max())
    gp = np.zeros((h + 2 * pad, w + 2 * pad))
    for k, feat in enumerate(offsets):
        sel = (argmax == k) * float(scale)
        if not sel.any():
            continue
        for dr, dc in feat:
            gp[pad + dr:pad + dr + h, pad + dc:pad + dc + w] += sel
    return gp[pad:pad + h, pad:pad + w].copy()
