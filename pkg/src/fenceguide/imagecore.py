"""Image containers, pixel-exact primitives and file I/O.

Images are plain numpy arrays in row-major ``(height, width)`` layout:

* gray images are ``uint8`` intensities in [0, 255]
* binary masks are ``uint8`` arrays holding only 0 and 1

On disk, masks are stored as {0, 255} grayscale. Supported formats are
8-bit grayscale PNG and binary PGM (P5).
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SUPPORTED_SUFFIXES = {".png", ".pgm"}


class ImageError(Exception):
    """Base class for image related failures."""


class MissingFileError(ImageError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class MalformedImageError(ImageError):
    pass


class InvalidShiftError(ImageError, ValueError):
    pass


class DimensionMismatchError(ImageError, ValueError):
    pass


def as_gray(img) -> np.ndarray:
    """Validate ``img`` as a 2D image with values in [0, 255] and return a uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("gray image values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_mask(mask) -> np.ndarray:
    """Validate ``mask`` as a 2D {0,1} array and return it as uint8."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D mask, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("binary mask values must be exactly 0 or 1")
    return arr.astype(np.uint8, copy=False)


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def clip_nonneg(x):
    """Return ``x`` where positive and 0 elsewhere (works on scalars and arrays)."""
    if np.ndim(x) == 0:
        return x if x > 0 else 0 * x
    return np.where(x > 0, x, 0).astype(np.asarray(x).dtype, copy=False)


def shift_horizontal(mask, i: int) -> np.ndarray:
    """Shift columns right by ``i`` pixels (left when negative), filling with zeros.

    ``out[r, c] = mask[r, c - i]`` where the source column exists.
    """
    arr = np.asarray(mask)
    width = arr.shape[1]
    i = int(i)
    if abs(i) >= width:
        raise InvalidShiftError(f"|shift| = {abs(i)} must be < width {width}")
    out = np.zeros_like(arr)
    if i > 0:
        out[:, i:] = arr[:, :width - i]
    elif i < 0:
        out[:, :width + i] = arr[:, -i:]
    else:
        out[:] = arr
    return out


def binarize(img, thr) -> np.ndarray:
    return (np.asarray(img) > thr).astype(np.uint8)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion with fixed weights 0.299/0.587/0.114, rounded half up."""
    rgb = np.asarray(rgb, dtype=np.float64)
    w = np.asarray(LUMA_WEIGHTS)
    luma = rgb[..., 0] * w[0] + rgb[..., 1] * w[1] + rgb[..., 2] * w[2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def _check_suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise UnsupportedFormatError(f"unsupported image format {suffix!r} ({path})")
    return suffix


def load_image(path) -> np.ndarray:
    """Load a PNG or PGM file as a uint8 gray image.

    Color inputs are converted with :func:`rgb_to_gray`; alpha is dropped.
    Images with more than 8 bits per sample are rejected.
    """
    path = Path(path)
    _check_suffix(path)
    if not path.is_file():
        raise MissingFileError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "1"):
                return np.array(im.convert("L"), dtype=np.uint8)
            if im.mode == "LA":
                return np.array(im, dtype=np.uint8)[..., 0]
            if im.mode in ("RGB", "RGBA", "P", "PA"):
                return rgb_to_gray(np.array(im.convert("RGB")))
            mode = im.mode
    except UnidentifiedImageError as exc:
        raise MalformedImageError(f"cannot decode {path}: {exc}") from exc
    except (SyntaxError, OSError, ValueError) as exc:
        raise MalformedImageError(f"cannot decode {path}: {exc}") from exc
    raise UnsupportedFormatError(f"unsupported pixel mode {mode!r} in {path}")


def save_image(img, path) -> None:
    """Save an 8-bit gray image. Boolean arrays are written as {0,255} masks."""
    path = Path(path)
    suffix = _check_suffix(path)
    arr = np.asarray(img)
    arr = as_mask(arr) * np.uint8(255) if arr.dtype == bool else as_gray(arr)
    if not path.parent.is_dir():
        raise MissingFileError(f"output directory does not exist: {path.parent}")
    fmt = "PNG" if suffix == ".png" else "PPM"
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(arr, mode="L").save(tmp, format=fmt)
    os.replace(tmp, path)


def save_mask(mask, path) -> None:
    """Save a {0,1} mask as a {0,255} gray image."""
    save_image(as_mask(mask) * np.uint8(255), path)


def load_mask(path) -> np.ndarray:
    """Load a mask image into {0,1}; any nonzero pixel counts as fence."""
    return (load_image(path) > 0).astype(np.uint8)
