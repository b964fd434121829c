"""Stereo guidance mask generation.

Edges of the left view are slid horizontally over the edges of the right
view. At each trial shift the surviving edges (an AND of the two maps) are
Fourier transformed; a fence is quasi-periodic, so when its edges line up
the above-threshold spectrum concentrates along a few directions. The shift
whose angle histogram has the tallest bucket is taken as the fence parallax
and the matching edge set is the guidance mask.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .edges import CannyParams, canny
from .imagecore import as_mask, check_same_shape, clip_nonneg, shift_horizontal

log = logging.getLogger(__name__)

SHIFT_DIRECTIONS = ("right", "left", "both")


@dataclass(frozen=True)
class Spectrum:
    """DC-centred magnitude spectrum.

    ``mag`` has the padded shape; the DC bin sits at
    ``(center_row, center_col) = (h // 2, w // 2)``.
    """
    mag: np.ndarray
    source_shape: tuple

    @property
    def height(self) -> int:
        return self.mag.shape[0]

    @property
    def width(self) -> int:
        return self.mag.shape[1]

    @property
    def center(self) -> tuple:
        return self.mag.shape[0] // 2, self.mag.shape[1] // 2

    @property
    def padded(self) -> bool:
        return self.mag.shape != tuple(self.source_shape)


@dataclass(frozen=True)
class GuidanceParams:
    tau: float = 100.0
    num_buckets: int = 90
    bandpass_inner: float = 3.0
    bandpass_outer: float | None = None  # None -> min(h, w) / 2 of the spectrum
    max_shift: int | None = None  # None -> width // 4
    min_shift: int = 0
    shift_dir: str = "right"
    pad_pow2: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.num_buckets < 1:
            raise ValueError("num_buckets must be >= 1")
        if self.bandpass_inner < 0:
            raise ValueError("bandpass_inner must be >= 0")
        if self.bandpass_outer is not None and not self.bandpass_inner < self.bandpass_outer:
            raise ValueError("need bandpass_inner < bandpass_outer")
        if self.shift_dir not in SHIFT_DIRECTIONS:
            raise ValueError(f"shift_dir must be one of {SHIFT_DIRECTIONS}")

    def shifts(self, width: int) -> list[int]:
        hi = width // 4 if self.max_shift is None else int(self.max_shift)
        lo = int(self.min_shift)
        if hi >= width:
            raise ValueError(f"max shift {hi} must be < width {width}")
        if lo > hi:
            raise ValueError("empty shift search range")
        pos = list(range(lo, hi + 1))
        if self.shift_dir == "right":
            return pos
        neg = [-i for i in pos]
        if self.shift_dir == "left":
            return neg
        return sorted(set(pos) | set(neg))


@dataclass
class MasCurve:
    shifts: list
    scores: list
    best_shift: int
    low_confidence: bool = False
    spectra: dict = field(default_factory=dict, repr=False)

    @property
    def search_range(self) -> tuple:
        return min(self.shifts), max(self.shifts)

    def score_at(self, shift: int) -> int:
        return self.scores[self.shifts.index(shift)]

    def to_csv(self) -> str:
        lines = ["shift,mas"]
        lines += [f"{s},{m}" for s, m in zip(self.shifts, self.scores)]
        return "\n".join(lines) + "\n"


def dual_subtract(cr, cl_i) -> np.ndarray:
    """Edges present in both maps: ``f(CR - f(CR - CL_i))`` with ``f`` = clip at 0."""
    cr = as_mask(cr).astype(np.int16)
    cl_i = as_mask(cl_i).astype(np.int16)
    check_same_shape(cr, cl_i)
    return clip_nonneg(cr - clip_nonneg(cr - cl_i)).astype(np.uint8)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def magnitude_spectrum(fm, pad_pow2: bool = True) -> Spectrum:
    """|DFT| of a mask with DC moved to the centre bin.

    With ``pad_pow2`` the input is zero padded (bottom/right) to the next
    power of two on each axis.
    """
    f = np.asarray(fm, dtype=np.float64)
    if pad_pow2:
        shape = (_next_pow2(f.shape[0]), _next_pow2(f.shape[1]))
        if shape != f.shape:
            f = np.pad(f, ((0, shape[0] - f.shape[0]), (0, shape[1] - f.shape[1])))
    mag = np.abs(np.fft.fftshift(np.fft.fft2(f)))
    return Spectrum(mag=mag, source_shape=tuple(np.shape(fm)))


def _radius_grid(spec: Spectrum) -> np.ndarray:
    y0, x0 = spec.center
    yy, xx = np.indices(spec.mag.shape)
    return np.hypot(yy - y0, xx - x0)


def bandpass(spec: Spectrum, inner: float, outer: float | None = None) -> Spectrum:
    """Zero magnitudes closer than ``inner`` or farther than ``outer`` from DC."""
    if outer is None:
        outer = min(spec.mag.shape) / 2.0
    if not inner < outer:
        raise ValueError("need inner < outer")
    r = _radius_grid(spec)
    mag = np.where((r < inner) | (r > outer), 0.0, spec.mag)
    return Spectrum(mag=mag, source_shape=spec.source_shape)


def alignment_angles(spec: Spectrum, tau: float) -> np.ndarray:
    """Angle in degrees, in [0, 90], between each strong bin and the centre.

    Only bins with magnitude above ``tau`` and strictly inside the spectrum
    (row 0 and column 0 are skipped) contribute; the centre bin never does.
    """
    y0, x0 = spec.center
    mag = spec.mag
    sel = mag > tau
    sel[0, :] = False
    sel[:, 0] = False
    sel[y0, x0] = False
    yp, xp = np.nonzero(sel)
    return np.degrees(np.arctan2(np.abs(yp - y0), np.abs(xp - x0)))


def angle_histogram(angles, num_buckets: int = 90) -> np.ndarray:
    # equal buckets over [0, 90]; numpy closes only the final bucket
    counts, _ = np.histogram(np.asarray(angles, dtype=np.float64),
                             bins=num_buckets, range=(0.0, 90.0))
    return counts


def mas(angles, num_buckets: int = 90) -> int:
    """Maximum alignment score: the tallest bucket of the angle histogram."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.size == 0:
        return 0
    return int(angle_histogram(angles, num_buckets).max())


def shift_score(cl, cr, shift: int, params: GuidanceParams, keep_spectrum: bool = False):
    fm = dual_subtract(cr, shift_horizontal(cl, shift))
    spec = magnitude_spectrum(fm, pad_pow2=params.pad_pow2)
    spec = bandpass(spec, params.bandpass_inner, params.bandpass_outer)
    score = mas(alignment_angles(spec, params.tau), params.num_buckets)
    return score, (spec if keep_spectrum else None)


def _pick_best(shifts, scores) -> int:
    top = max(scores)
    candidates = [s for s, m in zip(shifts, scores) if m == top]
    return min(candidates, key=lambda s: (abs(s), s))


def estimate_shift(cl, cr, params: GuidanceParams | None = None, threads: int = 1,
                   keep_spectra: bool = False) -> MasCurve:
    """Score every trial shift of ``cl`` against ``cr`` and pick the parallax."""
    params = params or GuidanceParams()
    cl = as_mask(cl)
    cr = as_mask(cr)
    check_same_shape(cl, cr)
    shifts = params.shifts(cl.shape[1])

    def run(i):
        return shift_score(cl, cr, i, params, keep_spectrum=keep_spectra)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, shifts))
    else:
        results = [run(i) for i in shifts]

    scores = [r[0] for r in results]
    best = _pick_best(shifts, scores)
    median = float(np.median(scores))
    low_conf = max(scores) < 2.0 * median or max(scores) == 0
    if low_conf:
        log.warning("flat alignment curve: max MAS %d < 2 x median %.1f; "
                    "shift %d is unreliable", max(scores), median, best)
    spectra = {i: r[1] for i, r in zip(shifts, results)} if keep_spectra else {}
    return MasCurve(shifts=shifts, scores=scores, best_shift=best,
                    low_confidence=low_conf, spectra=spectra)


def guidance_mask(left, right, canny_params: CannyParams | None = None,
                  params: GuidanceParams | None = None, threads: int = 1,
                  keep_spectra: bool = False):
    """Full pipeline from a stereo pair to ``(FM, curve)``."""
    check_same_shape(np.asarray(left), np.asarray(right))
    cl = canny(left, canny_params)
    cr = canny(right, canny_params)
    curve = estimate_shift(cl, cr, params, threads=threads, keep_spectra=keep_spectra)
    fm = dual_subtract(cr, shift_horizontal(cl, curve.best_shift))
    return fm, curve


def spectrum_preview(spec: Spectrum) -> np.ndarray:
    """log(1 + |H|) rescaled to uint8 for inspection."""
    v = np.log1p(spec.mag)
    top = v.max()
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor(v / top * 255.0 + 0.5).astype(np.uint8)


__all__ = [
    "Spectrum", "GuidanceParams", "MasCurve", "dual_subtract", "magnitude_spectrum",
    "bandpass", "alignment_angles", "angle_histogram", "mas", "estimate_shift",
    "guidance_mask", "spectrum_preview", "shift_score",
]
